//! Surfaces, points, regions, point sets and scenes.
//!
//! Charts: the flat torus uses `(p, q) ∈ [0,1)²`, the round sphere uses
//! cylindrical `(z, φ) ∈ [-1,1] × [0,2π)` and the plane square uses a finite
//! rectangle. Points always carry chart coordinates in the fields `p` and `q`
//! (on the sphere `p = z`, `q = φ`), and the symplectic form is
//! `ρ dp∧dq` with constant density `ρ = B / chart area`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::certificates::ConstraintClass;
use crate::decimal::{self, Real};
use crate::error::{Error, Result};

/// Largest `|z|` used when sampling the sphere chart.
pub const POLE_CLEARANCE: f64 = 1.0 / 1_048_576.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    FlatTorus,
    RoundSphere,
    PlaneSquare,
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurfaceKind::FlatTorus => "flat-torus",
            SurfaceKind::RoundSphere => "round-sphere",
            SurfaceKind::PlaneSquare => "plane-square",
        })
    }
}

/// Closed real interval stored as two decimal strings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval(#[serde(with = "decimal::pair")] pub [f64; 2]);

/// Unvalidated surface descriptor, as found in scene files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<[Interval; 2]>,
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub padding: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurfaceSpec", into = "SurfaceSpec")]
pub struct Surface {
    kind: SurfaceKind,
    extents: [[f64; 2]; 2],
    area: f64,
    padding: f64,
}

impl TryFrom<SurfaceSpec> for Surface {
    type Error = Error;

    fn try_from(spec: SurfaceSpec) -> Result<Self> {
        make_surface(&spec)
    }
}

impl From<Surface> for SurfaceSpec {
    fn from(s: Surface) -> Self {
        let plane = s.kind == SurfaceKind::PlaneSquare;
        SurfaceSpec {
            kind: s.kind,
            area: Some(s.area),
            extents: plane.then(|| [Interval(s.extents[0]), Interval(s.extents[1])]),
            padding: plane.then_some(s.padding),
        }
    }
}

/// Validate a surface descriptor.
///
/// The sphere defaults to total area 4π; the plane square defaults to its
/// chart area and a padding of 5% of the shorter side.
pub fn make_surface(spec: &SurfaceSpec) -> Result<Surface> {
    if let Some(a) = spec.area {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidSurface(format!("area must be positive, got {a}")));
        }
    }
    match spec.kind {
        SurfaceKind::FlatTorus => Ok(Surface {
            kind: SurfaceKind::FlatTorus,
            extents: [[0.0, 1.0], [0.0, 1.0]],
            area: spec.area.unwrap_or(1.0),
            padding: 0.0,
        }),
        SurfaceKind::RoundSphere => Ok(Surface {
            kind: SurfaceKind::RoundSphere,
            extents: [[-1.0, 1.0], [0.0, 2.0 * PI]],
            area: spec.area.unwrap_or(4.0 * PI),
            padding: 0.0,
        }),
        SurfaceKind::PlaneSquare => {
            let ext = spec
                .extents
                .ok_or_else(|| Error::InvalidSurface("plane-square needs extents".into()))?;
            let extents = [ext[0].0, ext[1].0];
            for [lo, hi] in extents {
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return Err(Error::InvalidSurface(format!(
                        "degenerate extent [{lo}, {hi}]"
                    )));
                }
            }
            let w = extents[0][1] - extents[0][0];
            let h = extents[1][1] - extents[1][0];
            let padding = spec.padding.unwrap_or(0.05 * w.min(h));
            if !(padding >= 0.0 && 2.0 * padding < w.min(h)) {
                return Err(Error::InvalidSurface(format!("bad padding {padding}")));
            }
            Ok(Surface {
                kind: SurfaceKind::PlaneSquare,
                extents,
                area: spec.area.unwrap_or(w * h),
                padding,
            })
        }
    }
}

impl Surface {
    pub fn torus(area: f64) -> Result<Self> {
        make_surface(&SurfaceSpec {
            kind: SurfaceKind::FlatTorus,
            area: Some(area),
            extents: None,
            padding: None,
        })
    }

    pub fn unit_torus() -> Self {
        Self::torus(1.0).expect("unit torus is valid")
    }

    pub fn sphere(area: Option<f64>) -> Result<Self> {
        make_surface(&SurfaceSpec {
            kind: SurfaceKind::RoundSphere,
            area,
            extents: None,
            padding: None,
        })
    }

    pub fn round_sphere() -> Self {
        Self::sphere(None).expect("round sphere is valid")
    }

    /// Plane square with area form `dp∧dq` (unit density).
    pub fn plane(p: [f64; 2], q: [f64; 2], padding: f64) -> Result<Self> {
        make_surface(&SurfaceSpec {
            kind: SurfaceKind::PlaneSquare,
            area: Some((p[1] - p[0]) * (q[1] - q[0])),
            extents: Some([Interval(p), Interval(q)]),
            padding: Some(padding),
        })
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn extents(&self) -> [[f64; 2]; 2] {
        self.extents
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn padding(&self) -> f64 {
        self.padding
    }

    pub fn coordinate_names(&self) -> [&'static str; 2] {
        match self.kind {
            SurfaceKind::RoundSphere => ["z", "phi"],
            _ => ["p", "q"],
        }
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.extents[axis][1] - self.extents[axis][0]
    }

    pub fn chart_area(&self) -> f64 {
        self.length(0) * self.length(1)
    }

    /// Area density of ω with respect to `dp∧dq`.
    pub fn density(&self) -> f64 {
        self.area / self.chart_area()
    }

    pub fn periodic(&self) -> [bool; 2] {
        match self.kind {
            SurfaceKind::FlatTorus => [true, true],
            SurfaceKind::RoundSphere => [false, true],
            SurfaceKind::PlaneSquare => [false, false],
        }
    }

    pub fn diameter(&self) -> f64 {
        self.length(0).hypot(self.length(1))
    }

    /// Default declared resolution for disjointness tests.
    pub fn resolution(&self) -> f64 {
        self.diameter() / 1024.0
    }

    /// Shortest signed displacement along an axis, honoring periodicity.
    pub fn wrap_delta(&self, axis: usize, d: f64) -> f64 {
        if self.periodic()[axis] {
            let l = self.length(axis);
            d - l * (d / l).round()
        } else {
            d
        }
    }

    /// Displacement from `a` to `b` using the nearest periodic image of `b`.
    pub fn delta(&self, a: Point, b: Point) -> [f64; 2] {
        [self.wrap_delta(0, b.p - a.p), self.wrap_delta(1, b.q - a.q)]
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let d = self.delta(a, b);
        d[0].hypot(d[1])
    }

    /// Map periodic coordinates into `[lo, hi)`; non-periodic ones are untouched.
    pub fn normalize(&self, x: Point) -> Point {
        let mut c = [x.p, x.q];
        for (axis, v) in c.iter_mut().enumerate() {
            if self.periodic()[axis] {
                let [lo, _] = self.extents[axis];
                let l = self.length(axis);
                let mut w = (*v - lo).rem_euclid(l);
                if w >= l {
                    w = 0.0;
                }
                *v = lo + w;
            }
        }
        Point::new(c[0], c[1])
    }

    pub fn in_chart(&self, x: Point) -> bool {
        let c = [x.p, x.q];
        (0..2).all(|a| {
            self.periodic()[a] || (c[a] >= self.extents[a][0] && c[a] <= self.extents[a][1])
        })
    }

    /// Chart box used for evaluation grids: the sphere clears the poles.
    pub fn sampling_box(&self) -> [[f64; 2]; 2] {
        let mut b = self.extents;
        if self.kind == SurfaceKind::RoundSphere {
            b[0] = [-1.0 + POLE_CLEARANCE, 1.0 - POLE_CLEARANCE];
        }
        b
    }

    /// Whether `x` lies in the padding margin of a plane square.
    pub fn in_padding(&self, x: Point) -> bool {
        if self.kind != SurfaceKind::PlaneSquare {
            return false;
        }
        let c = [x.p, x.q];
        (0..2).any(|a| {
            c[a] < self.extents[a][0] + self.padding || c[a] > self.extents[a][1] - self.padding
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub p: f64,
    pub q: f64,
}

impl Point {
    pub const fn new(p: f64, q: f64) -> Self {
        Point { p, q }
    }

    pub fn coords(self) -> [f64; 2] {
        [self.p, self.q]
    }

    pub fn offset(self, dp: f64, dq: f64) -> Self {
        Point::new(self.p + dp, self.q + dq)
    }
}

impl From<[f64; 2]> for Point {
    fn from(c: [f64; 2]) -> Self {
        Point::new(c[0], c[1])
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        decimal::pair::serialize(&[self.p, self.q], s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        decimal::pair::deserialize(d).map(Point::from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Rectangle {
        p: Interval,
        q: Interval,
    },
    Disc {
        center: Point,
        #[serde(with = "decimal")]
        radius: f64,
    },
    /// Axis-aligned quadrilateral given by its corners in any cyclic order.
    Quadrilateral { corners: [Point; 4] },
    ComplementOf(Box<Region>),
    Union(Vec<Region>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub shape: Shape,
    /// +1 traverses the boundary counterclockwise, -1 clockwise.
    #[serde(default = "positive", skip_serializing_if = "is_positive")]
    pub orientation: i8,
}

fn positive() -> i8 {
    1
}

fn is_positive(o: &i8) -> bool {
    *o == 1
}

impl Region {
    pub fn rectangle(p: [f64; 2], q: [f64; 2]) -> Self {
        Region {
            shape: Shape::Rectangle {
                p: Interval(p),
                q: Interval(q),
            },
            orientation: 1,
        }
    }

    pub fn disc(center: Point, radius: f64) -> Self {
        Region {
            shape: Shape::Disc { center, radius },
            orientation: 1,
        }
    }

    pub fn quadrilateral(corners: [Point; 4]) -> Self {
        Region {
            shape: Shape::Quadrilateral { corners },
            orientation: 1,
        }
    }

    pub fn complement(inner: Region) -> Self {
        Region {
            shape: Shape::ComplementOf(Box::new(inner)),
            orientation: 1,
        }
    }

    pub fn union(parts: Vec<Region>) -> Self {
        Region {
            shape: Shape::Union(parts),
            orientation: 1,
        }
    }

    pub fn reversed(mut self) -> Self {
        self.orientation = -self.orientation;
        self
    }

    /// The rectangle spanned by an axis-aligned quadrilateral or rectangle.
    pub fn as_rectangle(&self) -> Result<Option<([f64; 2], [f64; 2])>> {
        match &self.shape {
            Shape::Rectangle { p, q } => Ok(Some((p.0, q.0))),
            Shape::Quadrilateral { corners } => quad_to_rect(corners).map(Some),
            _ => Ok(None),
        }
    }

    /// Check that the region fits its chart and has a sensible area.
    pub fn validate(&self, surface: &Surface) -> Result<()> {
        let a = area(surface, self)?;
        if !(a > 0.0 && a <= surface.area() * (1.0 + 1e-12)) {
            return Err(Error::InvalidRegion(format!(
                "area {a} outside (0, {}]",
                surface.area()
            )));
        }
        Ok(())
    }

    /// Closed boundary curves, each oriented with the region on the left
    /// (flipped by a negative orientation). Corners of rectangles are
    /// always included.
    pub fn boundary_loops(&self, surface: &Surface, n: usize) -> Result<Vec<Vec<Point>>> {
        let mut loops = match &self.shape {
            Shape::Rectangle { .. } | Shape::Quadrilateral { .. } => {
                let (p, q) = self.as_rectangle()?.expect("rectangle-like");
                check_rectangle(surface, p, q)?;
                rectangle_loops(surface, p, q, n)?
            }
            Shape::Disc { center, radius } => {
                check_disc(surface, *center, *radius)?;
                vec![(0..n)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / n as f64;
                        center.offset(radius * t.cos(), radius * t.sin())
                    })
                    .collect()]
            }
            Shape::ComplementOf(inner) => {
                let mut l = inner.boundary_loops(surface, n)?;
                for lp in &mut l {
                    reverse_loop(lp);
                }
                l
            }
            Shape::Union(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidRegion("empty union".into()));
                }
                let per = (n / parts.len()).max(8);
                let mut all = Vec::new();
                for r in parts {
                    all.extend(r.boundary_loops(surface, per)?);
                }
                all
            }
        };
        if self.orientation < 0 {
            for lp in &mut loops {
                reverse_loop(lp);
            }
        }
        Ok(loops)
    }
}

fn reverse_loop(lp: &mut [Point]) {
    // Keep the starting point so corner bookkeeping stays stable.
    lp[1..].reverse();
}

fn quad_to_rect(corners: &[Point; 4]) -> Result<([f64; 2], [f64; 2])> {
    let ps: Vec<f64> = corners.iter().map(|c| c.p).collect();
    let qs: Vec<f64> = corners.iter().map(|c| c.q).collect();
    let (p0, p1) = min_max(&ps);
    let (q0, q1) = min_max(&qs);
    let on = |v: f64, a: f64, b: f64| v == a || v == b;
    let corners_ok = corners.iter().all(|c| on(c.p, p0, p1) && on(c.q, q0, q1));
    let mut distinct = corners.to_vec();
    distinct.sort_by(|a, b| a.p.total_cmp(&b.p).then(a.q.total_cmp(&b.q)));
    distinct.dedup();
    if !corners_ok || distinct.len() != 4 {
        return Err(Error::InvalidRegion(
            "quadrilateral corners must form an axis-aligned rectangle".into(),
        ));
    }
    Ok(([p0, p1], [q0, q1]))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn check_rectangle(surface: &Surface, p: [f64; 2], q: [f64; 2]) -> Result<()> {
    let span = [p, q];
    for a in 0..2 {
        let [lo, hi] = span[a];
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidRegion(format!("degenerate interval [{lo}, {hi}]")));
        }
        let [elo, ehi] = surface.extents()[a];
        let tol = 1e-12 * surface.length(a);
        if surface.periodic()[a] {
            if hi - lo > surface.length(a) + tol {
                return Err(Error::InvalidRegion("rectangle wider than the period".into()));
            }
        } else if lo < elo - tol || hi > ehi + tol {
            return Err(Error::InvalidRegion(format!(
                "rectangle [{lo}, {hi}] exceeds chart extent [{elo}, {ehi}]"
            )));
        }
    }
    Ok(())
}

fn check_disc(surface: &Surface, c: Point, r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidRegion(format!("bad radius {r}")));
    }
    let cc = c.coords();
    for a in 0..2 {
        if surface.periodic()[a] {
            if 2.0 * r >= surface.length(a) {
                return Err(Error::InvalidRegion("disc wraps onto itself".into()));
            }
        } else {
            let [lo, hi] = surface.extents()[a];
            if cc[a] - r < lo || cc[a] + r > hi {
                return Err(Error::InvalidRegion("disc exceeds chart extents".into()));
            }
        }
    }
    Ok(())
}

fn full(surface: &Surface, axis: usize, span: [f64; 2]) -> bool {
    surface.periodic()[axis] && span[1] - span[0] >= surface.length(axis) * (1.0 - 1e-12)
}

fn rectangle_loops(
    surface: &Surface,
    p: [f64; 2],
    q: [f64; 2],
    n: usize,
) -> Result<Vec<Vec<Point>>> {
    let fp = full(surface, 0, p);
    let fq = full(surface, 1, q);
    let segment = |a: Point, b: Point, k: usize| -> Vec<Point> {
        (0..k)
            .map(|i| {
                let t = i as f64 / k as f64;
                Point::new(a.p + t * (b.p - a.p), a.q + t * (b.q - a.q))
            })
            .collect()
    };
    match (fp, fq) {
        (true, true) => Err(Error::InvalidRegion(
            "region covers the whole surface and has no boundary".into(),
        )),
        // A band in q: the sides q = q0 and q = q1 are identified.
        (false, true) => {
            let k = (n / 2).max(4);
            Ok(vec![
                segment(Point::new(p[1], q[0]), Point::new(p[1], q[1]), k),
                segment(Point::new(p[0], q[1]), Point::new(p[0], q[0]), k),
            ])
        }
        (true, false) => {
            let k = (n / 2).max(4);
            Ok(vec![
                segment(Point::new(p[0], q[0]), Point::new(p[1], q[0]), k),
                segment(Point::new(p[1], q[1]), Point::new(p[0], q[1]), k),
            ])
        }
        (false, false) => {
            let corners = [
                Point::new(p[0], q[0]),
                Point::new(p[1], q[0]),
                Point::new(p[1], q[1]),
                Point::new(p[0], q[1]),
            ];
            let lens = [p[1] - p[0], q[1] - q[0], p[1] - p[0], q[1] - q[0]];
            let counts = split_counts(n.max(4), &lens);
            let mut out = Vec::with_capacity(n);
            for i in 0..4 {
                out.extend(segment(corners[i], corners[(i + 1) % 4], counts[i]));
            }
            Ok(vec![out])
        }
    }
}

/// Split `n` points across pieces proportionally to `weights`, at least one each.
fn split_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((n as f64 * w / total).floor() as usize).max(1))
        .collect();
    let mut assigned: usize = counts.iter().sum();
    let mut i = 0;
    let m = counts.len();
    while assigned < n {
        counts[i % m] += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > n {
        let j = (0..counts.len()).max_by_key(|&j| counts[j]).unwrap();
        if counts[j] <= 1 {
            break;
        }
        counts[j] -= 1;
        assigned -= 1;
    }
    counts
}

/// Area of a region in units of ω.
pub fn area(surface: &Surface, region: &Region) -> Result<f64> {
    let rho = surface.density();
    match &region.shape {
        Shape::Rectangle { .. } | Shape::Quadrilateral { .. } => {
            let (p, q) = region.as_rectangle()?.expect("rectangle-like");
            check_rectangle(surface, p, q)?;
            Ok((p[1] - p[0]) * (q[1] - q[0]) * rho)
        }
        Shape::Disc { center, radius } => {
            check_disc(surface, *center, *radius)?;
            Ok(PI * radius * radius * rho)
        }
        Shape::ComplementOf(inner) => Ok(surface.area() - area(surface, inner)?),
        Shape::Union(parts) => parts.iter().map(|r| area(surface, r)).sum(),
    }
}

/// Boundary of a single-component region as one ordered list of points.
pub fn sample_boundary(surface: &Surface, region: &Region, n: usize) -> Result<Vec<Point>> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("need n >= 8, got {n}")));
    }
    let mut loops = region.boundary_loops(surface, n)?;
    if loops.len() != 1 {
        return Err(Error::InvalidRegion(format!(
            "boundary has {} components; use boundary_loops",
            loops.len()
        )));
    }
    Ok(loops.remove(0))
}

/// Coordinate axis of the ambient sphere for great circles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ambient {
    X,
    Y,
    Z,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSet {
    Segment {
        from: Point,
        to: Point,
    },
    Polyline {
        points: Vec<Point>,
        #[serde(default)]
        closed: bool,
    },
    /// `{p = value}` for axis 0, `{q = value}` for axis 1.
    CoordLine {
        axis: usize,
        #[serde(with = "decimal")]
        value: f64,
    },
    /// `{x = 0}`, `{y = 0}` or `{z = 0}` on the round sphere.
    GreatCircle {
        axis: Ambient,
    },
    Disc {
        center: Point,
        #[serde(with = "decimal")]
        radius: f64,
    },
    Band {
        core: Box<PointSet>,
        #[serde(with = "decimal")]
        half_width: f64,
    },
    Union(Vec<PointSet>),
}

fn segment_distance(surface: &Surface, a: Point, b: Point, x: Point) -> f64 {
    let d = surface.delta(a, x);
    let base = [a.p + d[0], a.q + d[1]];
    let e = [b.p - a.p, b.q - a.q];
    let ee = e[0] * e[0] + e[1] * e[1];
    let shifts = |axis: usize| -> Vec<f64> {
        if surface.periodic()[axis] {
            let l = surface.length(axis);
            vec![-l, 0.0, l]
        } else {
            vec![0.0]
        }
    };
    let mut best = f64::INFINITY;
    for sp in shifts(0) {
        for sq in shifts(1) {
            let v = [base[0] + sp - a.p, base[1] + sq - a.q];
            let t = if ee > 0.0 {
                ((v[0] * e[0] + v[1] * e[1]) / ee).clamp(0.0, 1.0)
            } else {
                0.0
            };
            best = best.min((v[0] - t * e[0]).hypot(v[1] - t * e[1]));
        }
    }
    best
}

impl PointSet {
    pub fn coord_line(axis: usize, value: f64) -> Self {
        PointSet::CoordLine { axis, value }
    }

    pub fn segment(from: Point, to: Point) -> Self {
        PointSet::Segment { from, to }
    }

    /// Chart distance from `x` to the set, with periodic wrapping.
    pub fn distance(&self, surface: &Surface, x: Point) -> f64 {
        match self {
            PointSet::Segment { from, to } => segment_distance(surface, *from, *to, x),
            PointSet::Polyline { points, closed } => {
                let n = points.len();
                match n {
                    0 => f64::INFINITY,
                    1 => surface.distance(points[0], x),
                    _ => {
                        let m = if *closed { n } else { n - 1 };
                        (0..m)
                            .map(|i| segment_distance(surface, points[i], points[(i + 1) % n], x))
                            .fold(f64::INFINITY, f64::min)
                    }
                }
            }
            PointSet::CoordLine { axis, value } => {
                let c = x.coords()[*axis];
                surface.wrap_delta(*axis, c - value).abs()
            }
            PointSet::GreatCircle { axis } => {
                self.great_circle_lines(*axis).distance(surface, x)
            }
            PointSet::Disc { center, radius } => (surface.distance(*center, x) - radius).max(0.0),
            PointSet::Band { core, half_width } => {
                (core.distance(surface, x) - half_width).max(0.0)
            }
            PointSet::Union(parts) => parts
                .iter()
                .map(|s| s.distance(surface, x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn great_circle_lines(&self, axis: Ambient) -> PointSet {
        match axis {
            Ambient::X => PointSet::Union(vec![
                PointSet::coord_line(1, 0.5 * PI),
                PointSet::coord_line(1, 1.5 * PI),
            ]),
            Ambient::Y => PointSet::Union(vec![
                PointSet::coord_line(1, 0.0),
                PointSet::coord_line(1, PI),
            ]),
            Ambient::Z => PointSet::coord_line(0, 0.0),
        }
    }

    /// True iff the chart distance from `x` to the set is at most `tol`.
    pub fn contains(&self, surface: &Surface, x: Point, tol: f64) -> bool {
        self.distance(surface, x) <= tol
    }

    /// Whether the set is one-dimensional (a curve or union of curves).
    pub fn is_curve(&self) -> bool {
        match self {
            PointSet::Disc { .. } | PointSet::Band { .. } => false,
            PointSet::Union(parts) => parts.iter().all(PointSet::is_curve),
            _ => true,
        }
    }

    /// Total length of a curve set in chart units (discs and bands report
    /// their boundary length, used only to distribute samples).
    pub fn length(&self, surface: &Surface) -> f64 {
        match self {
            PointSet::Segment { from, to } => (to.p - from.p).hypot(to.q - from.q),
            PointSet::Polyline { points, closed } => {
                let n = points.len();
                let m = if *closed { n } else { n.saturating_sub(1) };
                (0..m)
                    .map(|i| {
                        let (a, b) = (points[i], points[(i + 1) % n]);
                        (b.p - a.p).hypot(b.q - a.q)
                    })
                    .sum()
            }
            PointSet::CoordLine { axis, .. } => surface.sampling_box()[1 - axis][1]
                - surface.sampling_box()[1 - axis][0],
            PointSet::GreatCircle { axis } => self.great_circle_lines(*axis).length(surface),
            PointSet::Disc { radius, .. } => 2.0 * PI * radius,
            PointSet::Band { core, half_width } => 2.0 * core.length(surface) + 4.0 * half_width,
            PointSet::Union(parts) => parts.iter().map(|s| s.length(surface)).sum(),
        }
    }

    /// Exactly `n` points of the set, normalized into the chart. Curves are
    /// sampled at equal parameter spacing including endpoints.
    pub fn sample(&self, surface: &Surface, n: usize) -> Vec<Point> {
        self.sample_impl(surface, n, false)
    }

    /// Like [`sample`](Self::sample) but curves use the midpoints of `n` equal pieces.
    pub fn sample_stratified(&self, surface: &Surface, n: usize) -> Vec<Point> {
        self.sample_impl(surface, n, true)
    }

    fn sample_impl(&self, surface: &Surface, n: usize, mid: bool) -> Vec<Point> {
        if n == 0 {
            return Vec::new();
        }
        let param = |i: usize, k: usize, closed: bool| -> f64 {
            if mid {
                (i as f64 + 0.5) / k as f64
            } else if closed {
                i as f64 / k as f64
            } else if k == 1 {
                0.5
            } else {
                i as f64 / (k - 1) as f64
            }
        };
        let pts: Vec<Point> = match self {
            PointSet::Segment { from, to } => (0..n)
                .map(|i| {
                    let t = param(i, n, false);
                    Point::new(from.p + t * (to.p - from.p), from.q + t * (to.q - from.q))
                })
                .collect(),
            PointSet::Polyline { points, closed } => {
                polyline_points(points, *closed, n, |i, k| param(i, k, *closed))
            }
            PointSet::CoordLine { axis, value } => {
                let other = 1 - axis;
                let closed = surface.periodic()[other];
                let [lo, hi] = surface.sampling_box()[other];
                (0..n)
                    .map(|i| {
                        let v = lo + param(i, n, closed) * (hi - lo);
                        let mut c = [0.0; 2];
                        c[*axis] = *value;
                        c[other] = v;
                        Point::from(c)
                    })
                    .collect()
            }
            PointSet::GreatCircle { axis } => {
                self.great_circle_lines(*axis).sample_impl(surface, n, mid)
            }
            PointSet::Disc { center, radius } => {
                // Vogel spiral: exactly n points with uniform density.
                let golden = PI * (3.0 - 5f64.sqrt());
                let r_max = radius * (1.0 - 1e-12);
                (0..n)
                    .map(|i| {
                        let r = r_max * ((i as f64 + 0.5) / n as f64).sqrt();
                        let t = golden * i as f64;
                        center.offset(r * t.cos(), r * t.sin())
                    })
                    .collect()
            }
            PointSet::Band { core, half_width } => {
                band_points(surface, core, *half_width, n)
            }
            PointSet::Union(parts) => {
                let weights: Vec<f64> =
                    parts.iter().map(|s| s.length(surface).max(1e-9)).collect();
                let counts = split_counts(n.max(parts.len()), &weights);
                let mut all: Vec<Point> = parts
                    .iter()
                    .zip(counts)
                    .flat_map(|(s, k)| s.sample_impl(surface, k, mid))
                    .collect();
                all.truncate(n);
                all
            }
        };
        pts.into_iter().map(|x| surface.normalize(x)).collect()
    }

    /// Samples spaced at most `h` apart along curves (lattice spacing `h`
    /// for two-dimensional sets).
    pub fn sample_spacing(&self, surface: &Surface, h: f64) -> Vec<Point> {
        match self {
            PointSet::Union(parts) => parts
                .iter()
                .flat_map(|s| s.sample_spacing(surface, h))
                .collect(),
            PointSet::Disc { radius, .. } => {
                let n = ((PI * radius * radius) / (h * h)).ceil() as usize;
                let mut pts = self.sample(surface, n.max(16));
                pts.extend(self.boundary_ring(surface, h));
                pts
            }
            PointSet::Band { core, half_width } => {
                let m = (core.length(surface) / h).ceil() as usize + 1;
                let k = ((2.0 * half_width) / h).ceil() as usize + 1;
                band_points(surface, core, *half_width, m.max(2) * k.max(2))
            }
            _ => {
                let n = (self.length(surface) / h).ceil() as usize + 1;
                self.sample(surface, n.max(2))
            }
        }
    }

    fn boundary_ring(&self, surface: &Surface, h: f64) -> Vec<Point> {
        match self {
            PointSet::Disc { center, radius } => {
                let n = ((2.0 * PI * radius) / h).ceil().max(8.0) as usize;
                let r = radius * (1.0 - 1e-12);
                (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        surface.normalize(center.offset(r * t.cos(), r * t.sin()))
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

fn polyline_points(
    points: &[Point],
    closed: bool,
    n: usize,
    param: impl Fn(usize, usize) -> f64,
) -> Vec<Point> {
    if points.len() < 2 {
        return points.iter().cycle().take(n.min(points.len() * n)).copied().collect();
    }
    let m = if closed { points.len() } else { points.len() - 1 };
    let seg_len: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % points.len()]);
            (b.p - a.p).hypot(b.q - a.q)
        })
        .collect();
    let total: f64 = seg_len.iter().sum();
    (0..n)
        .map(|i| {
            let mut s = param(i, n) * total;
            for (j, &len) in seg_len.iter().enumerate() {
                if s <= len || j == m - 1 {
                    let t = if len > 0.0 { (s / len).clamp(0.0, 1.0) } else { 0.0 };
                    let (a, b) = (points[j], points[(j + 1) % points.len()]);
                    return Point::new(a.p + t * (b.p - a.p), a.q + t * (b.q - a.q));
                }
                s -= len;
            }
            points[0]
        })
        .collect()
}

fn band_points(surface: &Surface, core: &PointSet, half_width: f64, n: usize) -> Vec<Point> {
    let levels = ((n as f64).sqrt().round() as usize).clamp(1, 64) | 1;
    let per = (n / levels).max(2);
    let spine = core.sample(surface, per);
    let eps = 1e-6 * surface.diameter();
    let mut pts = Vec::with_capacity(n);
    for (i, &c) in spine.iter().enumerate() {
        // Local normal from neighbouring spine points.
        let a = spine[i.saturating_sub(1)];
        let b = spine[(i + 1).min(spine.len() - 1)];
        let d = surface.delta(a, b);
        let len = d[0].hypot(d[1]);
        let normal = if len > eps { [-d[1] / len, d[0] / len] } else { [1.0, 0.0] };
        for k in 0..levels {
            let t = if levels == 1 {
                0.0
            } else {
                (2.0 * k as f64 / (levels - 1) as f64 - 1.0) * half_width * (1.0 - 1e-9)
            };
            pts.push(surface.normalize(c.offset(t * normal[0], t * normal[1])));
        }
    }
    while pts.len() < n {
        pts.push(spine[pts.len() % spine.len()]);
    }
    pts.truncate(n);
    pts
}

/// Minimal distance between two sets, from both sides, sampling at spacing `h`.
pub fn set_distance(surface: &Surface, a: &PointSet, b: &PointSet, h: f64) -> (f64, Point) {
    let mut best = (f64::INFINITY, Point::default());
    for x in a.sample_spacing(surface, h) {
        let d = b.distance(surface, x);
        if d < best.0 {
            best = (d, x);
        }
    }
    for x in b.sample_spacing(surface, h) {
        let d = a.distance(surface, x);
        if d < best.0 {
            best = (d, x);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSet {
    pub name: String,
    pub descriptor: PointSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedRegion {
    pub name: String,
    pub region: Region,
}

/// A pair of fields attached to a scene: expressions or a named factory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSpec {
    Expressions { f: String, g: String },
    Factory {
        name: String,
        #[serde(default)]
        params: std::collections::BTreeMap<String, Real>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPair {
    pub name: String,
    pub pair: PairSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectedStatus {
    Exact,
    PositiveUnknown,
    RegressionOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub pb: Option<f64>,
    pub status: ExpectedStatus,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub surface: Surface,
    pub sets: Vec<NamedSet>,
    pub class: ConstraintClass,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<NamedRegion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<NamedPair>,
    pub expected: Expected,
    /// Disjointness resolution; defaults to 2⁻¹⁰ of the chart diameter.
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub safety_margin: Option<f64>,
}

impl Scene {
    pub fn set(&self, i: usize) -> &PointSet {
        &self.sets[i].descriptor
    }

    pub fn set_by_name(&self, name: &str) -> Option<&PointSet> {
        self.sets.iter().find(|s| s.name == name).map(|s| &s.descriptor)
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name).map(|r| &r.region)
    }

    pub fn pair(&self, name: &str) -> Option<&PairSpec> {
        self.pairs.iter().find(|p| p.name == name).map(|p| &p.pair)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution.unwrap_or_else(|| self.surface.resolution())
    }

    /// Sets closer than this are treated as intersecting.
    pub fn separation_threshold(&self) -> f64 {
        self.resolution() + self.safety_margin.unwrap_or(0.0)
    }

    /// Check arity and the intersection hypotheses of the scene's class.
    pub fn validate(&self) -> Result<()> {
        let n = self.sets.len();
        let want = self.class.arity();
        if n != want {
            return Err(Error::SceneValidation(format!(
                "class {} needs {want} sets, scene has {n}",
                self.class.kind
            )));
        }
        self.class.validate()?;
        for r in &self.regions {
            r.region
                .validate(&self.surface)
                .map_err(|e| Error::SceneValidation(format!("region {}: {e}", r.name)))?;
        }
        let h = self.resolution();
        let thr = self.separation_threshold();
        let s = &self.surface;
        let apart = |i: usize, j: usize| -> Result<()> {
            let (d, x) = set_distance(s, self.set(i), self.set(j), h);
            if d <= thr {
                return Err(Error::SceneValidation(format!(
                    "sets {} and {} meet (distance {d:.3e} <= {thr:.3e} near ({:.4}, {:.4}))",
                    self.sets[i].name, self.sets[j].name, x.p, x.q
                )));
            }
            Ok(())
        };
        if self.class.kind.is_pb3() {
            // No point may lie near all three sets.
            for i in 0..3 {
                for x in self.set(i).sample_spacing(s, h) {
                    let near = (0..3).all(|j| j == i || self.set(j).distance(s, x) <= thr);
                    if near {
                        return Err(Error::SceneValidation(format!(
                            "X, Y, Z share a point near ({:.4}, {:.4})",
                            x.p, x.q
                        )));
                    }
                }
            }
        } else if self.class.kind.is_pb4() {
            apart(0, 1)?;
            apart(2, 3)?;
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    let gap = (j - i).min(n + i - j);
                    if gap > 1 {
                        apart(i, j)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn make_surface_examples() {
        let t = Surface::unit_torus();
        assert_eq!(t.extents(), [[0.0, 1.0], [0.0, 1.0]]);
        assert_eq!(t.density(), 1.0);
        let s = Surface::round_sphere();
        assert_abs_diff_eq!(s.area(), 4.0 * PI);
        assert_abs_diff_eq!(s.density(), 1.0, epsilon = 1e-15);
        assert!(Surface::plane([0.0, 0.0], [0.0, 1.0], 0.0).is_err());
        assert!(Surface::torus(0.0).is_err());
        assert!(Surface::torus(-1.0).is_err());
    }

    #[test]
    fn area_examples() {
        let t = Surface::unit_torus();
        let r = Region::rectangle([0.0, 0.5], [0.0, 0.5]);
        assert_abs_diff_eq!(area(&t, &r).unwrap(), 0.25);
        assert_abs_diff_eq!(area(&t, &Region::complement(r)).unwrap(), 0.75);
        let s = Surface::round_sphere();
        let band = Region::rectangle([-0.5, 0.5], [0.0, 2.0 * PI]);
        assert_abs_diff_eq!(area(&s, &band).unwrap(), 2.0 * PI, epsilon = 1e-12);
        let pl = Surface::plane([0.0, 1.0], [0.0, 1.0], 0.1).unwrap();
        assert!(area(&pl, &Region::rectangle([0.5, 1.5], [0.0, 0.5])).is_err());
    }

    #[test]
    fn contains_examples() {
        let t = Surface::unit_torus();
        let c = PointSet::coord_line(0, 0.0);
        assert!(c.contains(&t, Point::new(0.0, 0.3), 0.0));
        assert!(!c.contains(&t, Point::new(0.5, 0.3), 0.1));
        assert!(c.contains(&t, Point::new(0.999, 0.3), 0.01));
    }

    #[test]
    fn sample_boundary_examples() {
        let t = Surface::unit_torus();
        let r = Region::rectangle([0.0, 0.5], [0.0, 0.5]);
        let b = sample_boundary(&t, &r, 8).unwrap();
        assert_eq!(b.len(), 8);
        for c in [[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]] {
            assert!(b.contains(&Point::from(c)), "corner {c:?} missing");
        }
        let d = sample_boundary(&t, &Region::disc(Point::new(0.5, 0.5), 0.2), 100).unwrap();
        assert_eq!(d.len(), 100);
        for x in &d {
            assert_abs_diff_eq!(t.distance(*x, Point::new(0.5, 0.5)), 0.2, epsilon = 1e-12);
        }
        let c = sample_boundary(&t, &Region::complement(r), 8).unwrap();
        let mut rev = b.clone();
        rev[1..].reverse();
        assert_eq!(c, rev);
        assert!(sample_boundary(&t, &Region::rectangle([0.0, 1.0], [0.0, 1.0]), 8).is_err());
    }

    #[test]
    fn great_circles_sample_inside() {
        let s = Surface::round_sphere();
        for axis in [Ambient::X, Ambient::Y, Ambient::Z] {
            let g = PointSet::GreatCircle { axis };
            for x in g.sample(&s, 101) {
                assert!(g.contains(&s, x, 0.0), "{axis:?} {x:?}");
            }
        }
    }

    #[test]
    fn scene_rejects_meeting_pb4_sets() {
        use crate::certificates::{ClassKind, ConstraintClass};
        let t = Surface::unit_torus();
        let line = |axis, v| NamedSet {
            name: format!("l{axis}{v}"),
            descriptor: PointSet::coord_line(axis, v),
        };
        let mut scene = Scene {
            name: "bad".into(),
            surface: t,
            sets: vec![line(0, 0.0), line(0, 0.5), line(1, 0.0), line(1, 0.5)],
            class: ConstraintClass::new(ClassKind::F4),
            regions: vec![],
            pairs: vec![],
            expected: Expected {
                pb: None,
                status: ExpectedStatus::RegressionOnly,
                source: String::new(),
            },
            resolution: None,
            safety_margin: None,
        };
        assert!(scene.validate().is_ok());
        scene.sets[1] = NamedSet {
            name: "x1".into(),
            descriptor: PointSet::segment(Point::new(0.5, 0.2), Point::new(0.0005, 0.2)),
        };
        assert!(scene.validate().is_err());
    }
}
