//! Admissibility classes and Stokes lower bounds.
//!
//! For a region `Σ` with boundary `∂Σ`, `|∫_Σ {F,G} ω| = |∮_{∂Σ} F dG|`,
//! so the mean of `{F,G}` over `Σ`, and hence its sup, is at least
//! `|∮ F dG| / area(Σ)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::error::{Error, Result};
use crate::fields::{line_integral_fdg, ScalarField};
use crate::geometry::{self, Point, PointSet, Region, Scene, Shape, Surface};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassKind {
    F3,
    #[serde(rename = "F3'")]
    F3Prime,
    F4,
    #[serde(rename = "F4'")]
    F4Prime,
    FN,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassKind::F3 => "F3",
            ClassKind::F3Prime => "F3'",
            ClassKind::F4 => "F4",
            ClassKind::F4Prime => "F4'",
            ClassKind::FN => "FN",
        })
    }
}

impl ClassKind {
    pub fn is_pb3(self) -> bool {
        matches!(self, ClassKind::F3 | ClassKind::F3Prime)
    }

    pub fn is_pb4(self) -> bool {
        matches!(self, ClassKind::F4 | ClassKind::F4Prime)
    }

    pub fn is_primed(self) -> bool {
        matches!(self, ClassKind::F3Prime | ClassKind::F4Prime)
    }

    pub fn primed(self) -> ClassKind {
        match self {
            ClassKind::F3 => ClassKind::F3Prime,
            ClassKind::F4 => ClassKind::F4Prime,
            k => k,
        }
    }
}

/// Affine function `a(s,t) = αs + βt + γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(with = "decimal")]
    pub alpha: f64,
    #[serde(with = "decimal")]
    pub beta: f64,
    #[serde(with = "decimal")]
    pub gamma: f64,
}

impl Affine {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Affine { alpha, beta, gamma }
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.alpha * s + self.beta * t + self.gamma
    }
}

/// Convex domain `Ω` for the values `(F, G)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Omega {
    Plane,
    Disc {
        center: Point,
        #[serde(with = "decimal")]
        radius: f64,
    },
}

impl Omega {
    /// How far `(s,t)` lies outside the closure of `Ω` (0 inside).
    pub fn excess(&self, s: f64, t: f64) -> f64 {
        match self {
            Omega::Plane => 0.0,
            Omega::Disc { center, radius } => ((s - center.p).hypot(t - center.q) - radius).max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintClass {
    pub kind: ClassKind,
    /// Radius of the `Op(X)` neighbourhoods of primed classes; defaults to
    /// 2% of the chart diameter.
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub op_radius: Option<f64>,
    /// Slack for the class inequalities at sampled points.
    #[serde(default, with = "decimal::option", skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Edges of the constraint polygon `P = ∩ {a_i ≥ 0}` (FN only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polygon: Vec<Affine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Omega>,
}

impl ConstraintClass {
    pub fn new(kind: ClassKind) -> Self {
        ConstraintClass {
            kind,
            op_radius: None,
            tolerance: None,
            polygon: Vec::new(),
            omega: None,
        }
    }

    pub fn with_op_radius(mut self, r: f64) -> Self {
        self.op_radius = Some(r);
        self
    }

    /// `F_N(P, Ω)`; validates condition ◊.
    pub fn polygon_class(polygon: Vec<Affine>, omega: Omega) -> Result<Self> {
        let c = ConstraintClass {
            kind: ClassKind::FN,
            op_radius: None,
            tolerance: None,
            polygon,
            omega: Some(omega),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn arity(&self) -> usize {
        match self.kind {
            ClassKind::F3 | ClassKind::F3Prime => 3,
            ClassKind::F4 | ClassKind::F4Prime => 4,
            ClassKind::FN => self.polygon.len(),
        }
    }

    pub fn op_radius(&self, surface: &Surface) -> f64 {
        self.op_radius.unwrap_or(0.02 * surface.diameter())
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(1e-9)
    }

    pub fn omega(&self) -> Omega {
        self.omega.clone().unwrap_or(Omega::Plane)
    }

    /// Edge functions of the class as a polygon: `a_i ≤ 0` on set `i`.
    pub fn edges(&self) -> Vec<Affine> {
        match self.kind {
            ClassKind::F3 | ClassKind::F3Prime => vec![
                Affine::new(1.0, 0.0, 0.0),
                Affine::new(0.0, 1.0, 0.0),
                Affine::new(-1.0, -1.0, 1.0),
            ],
            // Set order (X0, X1, Y0, Y1): F ≤ 0, F ≥ 1, G ≤ 0, G ≥ 1.
            ClassKind::F4 | ClassKind::F4Prime => vec![
                Affine::new(1.0, 0.0, 0.0),
                Affine::new(-1.0, 0.0, 1.0),
                Affine::new(0.0, 1.0, 0.0),
                Affine::new(0.0, -1.0, 1.0),
            ],
            ClassKind::FN => self.polygon.clone(),
        }
    }

    /// Structural checks; for FN this includes condition ◊.
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.op_radius {
            if !(r > 0.0) {
                return Err(Error::SceneValidation(format!("op_radius must be positive, got {r}")));
            }
        }
        if self.kind != ClassKind::FN {
            return Ok(());
        }
        let n = self.polygon.len();
        if n < 3 {
            return Err(Error::SceneValidation(format!("polygon needs >= 3 edges, got {n}")));
        }
        if let Omega::Disc { radius, .. } = self.omega() {
            if !(radius > 0.0) {
                return Err(Error::SceneValidation("omega radius must be positive".into()));
            }
        }
        check_diamond(&self.polygon, &self.omega())
    }
}

/// Intersection point of two lines `a = 0`, `b = 0`, if they are not parallel.
fn line_intersection(a: &Affine, b: &Affine) -> Option<[f64; 2]> {
    let det = a.alpha * b.beta - a.beta * b.alpha;
    let scale = a.alpha.hypot(a.beta) * b.alpha.hypot(b.beta);
    if det.abs() <= 1e-12 * scale {
        return None;
    }
    Some([
        (a.beta * b.gamma - b.beta * a.gamma) / det,
        (b.alpha * a.gamma - a.alpha * b.gamma) / det,
    ])
}

/// Condition ◊: every `L_i ∩ L_j` inside the closure of `Ω` is a vertex of `P`.
pub fn check_diamond(polygon: &[Affine], omega: &Omega) -> Result<()> {
    let tol = 1e-10;
    for (i, a) in polygon.iter().enumerate() {
        for (j, b) in polygon.iter().enumerate().skip(i + 1) {
            match line_intersection(a, b) {
                None => {
                    // Parallel lines: coincident ones are never allowed.
                    let na = a.alpha.hypot(a.beta);
                    let nb = b.alpha.hypot(b.beta);
                    let cross = (a.gamma / na) * (b.alpha / nb) - (b.gamma / nb) * (a.alpha / na);
                    let cross2 = (a.gamma / na) * (b.beta / nb) - (b.gamma / nb) * (a.beta / na);
                    if cross.abs() < tol && cross2.abs() < tol {
                        return Err(Error::SceneValidation(format!(
                            "edges {i} and {j} lie on the same line"
                        )));
                    }
                }
                Some([s, t]) => {
                    let in_p = polygon.iter().all(|c| c.eval(s, t) >= -tol);
                    if !in_p && omega.excess(s, t) <= 0.0 {
                        return Err(Error::SceneValidation(format!(
                            "condition ◊ fails: lines {i} and {j} meet at ({s:.4}, {t:.4}), \
                             not a vertex of P but inside closure(Ω)"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionResult {
    pub name: String,
    pub passed: bool,
    pub worst_violation: f64,
    pub location: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub class: String,
    pub conditions: Vec<ConditionResult>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> Option<&ConditionResult> {
        self.conditions
            .iter()
            .filter(|c| !c.passed)
            .max_by(|a, b| a.worst_violation.total_cmp(&b.worst_violation))
    }
}

/// Points of a set and its `Op` neighbourhood probes at radius `r`.
fn probe_points(surface: &Surface, set: &PointSet, h: f64, r: f64) -> Vec<Point> {
    let base = set.sample_spacing(surface, h);
    if r <= 0.0 {
        return base;
    }
    let mut out = Vec::with_capacity(base.len() * 9);
    for x in base {
        out.push(x);
        for s in [0.5 * r, r] {
            for (dp, dq) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                let y = x.offset(dp * s, dq * s);
                if surface.in_chart(y) {
                    out.push(surface.normalize(y));
                }
            }
        }
    }
    out
}

fn evaluate_condition(
    name: String,
    pts: &[Point],
    tol: f64,
    violation: impl Fn(Point) -> f64,
) -> ConditionResult {
    let mut worst = 0.0;
    let mut loc = None;
    for &x in pts {
        let v = violation(x);
        if v > worst || v.is_nan() {
            worst = if v.is_nan() { f64::INFINITY } else { v };
            loc = Some(x.coords());
        }
    }
    ConditionResult {
        name,
        passed: worst <= tol,
        worst_violation: worst,
        location: loc,
    }
}

/// Check the scene's class inequalities on sampled points of each set (and
/// of a global grid for range conditions).
pub fn check_admissible(f: &ScalarField, g: &ScalarField, scene: &Scene) -> AdmissibilityReport {
    check_admissible_as(f, g, scene, &scene.class)
}

/// Check against an explicitly given class (for example the primed
/// version of the scene's class).
pub fn check_admissible_as(
    f: &ScalarField,
    g: &ScalarField,
    scene: &Scene,
    class: &ConstraintClass,
) -> AdmissibilityReport {
    let s = &scene.surface;
    let h = scene.resolution();
    let tol = class.tolerance();
    let primed = class.kind.is_primed();
    let r = if primed { class.op_radius(s) } else { 0.0 };
    let edges = class.edges();
    let mut conditions = Vec::new();
    for (i, a) in edges.iter().enumerate() {
        let set = &scene.sets[i];
        let pts = probe_points(s, &set.descriptor, h, r);
        let (name, strict) = if primed {
            (format!("{} = 0 on Op({})", edge_label(class.kind, i), set.name), true)
        } else {
            (format!("{} <= 0 on {}", edge_label(class.kind, i), set.name), false)
        };
        conditions.push(evaluate_condition(name, &pts, tol, |x| {
            let v = a.eval(f.value(x), g.value(x));
            if strict {
                v.abs()
            } else {
                v.max(0.0)
            }
        }));
    }
    let grid = Grid::for_surface(s, 128);
    let all: Vec<Point> = (0..grid.node_count()).map(|k| grid.node_at(k)).collect();
    if primed {
        conditions.push(evaluate_condition("range in P".into(), &all, tol, |x| {
            let (u, v) = (f.value(x), g.value(x));
            edges.iter().map(|a| -a.eval(u, v)).fold(0.0, f64::max)
        }));
    }
    if class.kind == ClassKind::FN {
        let omega = class.omega();
        conditions.push(evaluate_condition("values in Ω".into(), &all, tol, |x| {
            omega.excess(f.value(x), g.value(x))
        }));
    }
    if s.kind() == geometry::SurfaceKind::PlaneSquare {
        let pad: Vec<Point> = all.iter().copied().filter(|x| s.in_padding(*x)).collect();
        conditions.push(evaluate_condition("vanish on padding".into(), &pad, tol, |x| {
            f.value(x).abs().max(g.value(x).abs())
        }));
    }
    AdmissibilityReport {
        class: class.kind.to_string(),
        conditions,
    }
}

fn edge_label(kind: ClassKind, i: usize) -> String {
    match (kind, i) {
        (ClassKind::F3 | ClassKind::F3Prime, 0) => "F".into(),
        (ClassKind::F3 | ClassKind::F3Prime, 1) => "G".into(),
        (ClassKind::F3 | ClassKind::F3Prime, _) => "1-F-G".into(),
        (ClassKind::F4 | ClassKind::F4Prime, 0) => "F".into(),
        (ClassKind::F4 | ClassKind::F4Prime, 1) => "1-F".into(),
        (ClassKind::F4 | ClassKind::F4Prime, 2) => "G".into(),
        (ClassKind::F4 | ClassKind::F4Prime, _) => "1-G".into(),
        (ClassKind::FN, i) => format!("a{}(F,G)", i + 1),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    /// Certified lower bound on `‖{F,G}‖`.
    pub value: f64,
    pub region: String,
    pub boundary_integral: f64,
    pub area: f64,
    /// Quadrature error budget of the boundary integral.
    pub error_budget: f64,
    pub valid: bool,
}

impl Certificate {
    fn trivial(region: &str) -> Self {
        Certificate {
            value: 0.0,
            region: region.into(),
            boundary_integral: 0.0,
            area: 0.0,
            error_budget: 0.0,
            valid: true,
        }
    }
}

/// Area enclosed by the boundary polygon that the line integral actually
/// traverses (inscribed polygons for discs).
fn traversed_area(surface: &Surface, region: &Region, n: usize) -> Result<f64> {
    let rho = surface.density();
    Ok(match &region.shape {
        Shape::Disc { radius, .. } => {
            let n = n as f64;
            0.5 * n * radius * radius * (2.0 * std::f64::consts::PI / n).sin() * rho
        }
        Shape::ComplementOf(inner) => surface.area() - traversed_area(surface, inner, n)?,
        Shape::Union(parts) => {
            let per = (n / parts.len().max(1)).max(8);
            let mut a = 0.0;
            for r in parts {
                a += traversed_area(surface, r, per)?;
            }
            a
        }
        _ => geometry::area(surface, region)?,
    })
}

/// Number of boundary points used by certificates.
pub const CERTIFICATE_POINTS: usize = 4096;

pub fn stokes_lower_bound(f: &ScalarField, g: &ScalarField, region: &Region) -> Result<Certificate> {
    stokes_lower_bound_named(f, g, region, "region")
}

fn stokes_lower_bound_named(
    f: &ScalarField,
    g: &ScalarField,
    region: &Region,
    name: &str,
) -> Result<Certificate> {
    let s = f.surface();
    let area = traversed_area(s, region, CERTIFICATE_POINTS)?;
    if !(area > 0.0) {
        return Err(Error::InvalidRegion(format!("degenerate region area {area}")));
    }
    let mut integral = 0.0;
    let mut err = 0.0;
    for lp in region.boundary_loops(s, CERTIFICATE_POINTS)? {
        let q = line_integral_fdg(f, g, &lp, true)?;
        integral += q.value;
        err += q.error;
    }
    err += 1e-12 * (1.0 + integral.abs());
    let value = ((integral.abs() - err) / (area + err)).max(0.0);
    Ok(Certificate {
        value,
        region: name.into(),
        boundary_integral: integral,
        area,
        error_budget: err,
        valid: value.is_finite(),
    })
}

/// Best Stokes bound over the scene's candidate regions, for a pair that
/// must first pass the scene's admissibility check.
pub fn scene_lower_bound(f: &ScalarField, g: &ScalarField, scene: &Scene) -> Result<Certificate> {
    let report = check_admissible(f, g, scene);
    if !report.passed() {
        let w = report.worst().expect("a failed condition");
        return Err(Error::NotAdmissible(format!(
            "{} (violation {:.3e})",
            w.name, w.worst_violation
        )));
    }
    let mut best = Certificate::trivial("none");
    for r in &scene.regions {
        let c = stokes_lower_bound_named(f, g, &r.region, &r.name)?;
        if c.value > best.value || best.region == "none" {
            best = c;
        }
    }
    Ok(best)
}
