//! Scalar fields, Poisson brackets, norms and integrals.
//!
//! Sign convention: `{F,G} = (F_q G_p − F_p G_q) / ρ` where `ρ` is the chart
//! area density, so `{p,q} = −1` on the unit torus. The division by `ρ`
//! happens in [`poisson_bracket`] and nowhere else.

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{Point, Region, Shape, Surface, SurfaceKind};
use crate::grid::{Grid, GridField, Interp};
use crate::rng::stream_rng;

/// Value and first chart partials.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dp: f64,
    pub dq: f64,
}

impl Jet {
    pub const fn new(value: f64, dp: f64, dq: f64) -> Self {
        Jet { value, dp, dq }
    }

    pub const fn constant(c: f64) -> Self {
        Jet::new(c, 0.0, 0.0)
    }

    pub fn scale(self, a: f64) -> Self {
        Jet::new(a * self.value, a * self.dp, a * self.dq)
    }

    /// Chain rule through a one-variable map with value `u` and slope `du`.
    pub fn compose(self, u: f64, du: f64) -> Self {
        Jet::new(u, du * self.dp, du * self.dq)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.value + o.value, self.dp + o.dp, self.dq + o.dq)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.value - o.value, self.dp - o.dp, self.dq - o.dq)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.value * o.value,
            self.dp * o.value + self.value * o.dp,
            self.dq * o.value + self.value * o.dq,
        )
    }
}

pub type JetFn = dyn Fn(Point) -> Jet + Send + Sync;
pub type ValueFn = dyn Fn(Point) -> f64 + Send + Sync;

/// Default centered-difference step, as a fraction of the shorter chart side.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone)]
enum Backing {
    /// Closed-form value and partials; `exact` is false when the partials
    /// come from finite differences somewhere below.
    Analytic { f: Arc<JetFn>, exact: bool },
    /// Values only; partials by centered differences with the given step.
    Sampled { f: Arc<ValueFn>, step: f64 },
    Grid(Arc<GridField>),
    Bracket {
        f: Box<ScalarField>,
        g: Box<ScalarField>,
        step: f64,
    },
}

#[derive(Clone)]
pub struct ScalarField {
    surface: Surface,
    backing: Backing,
    support: Option<Region>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("surface", &self.surface.kind())
            .field("backing", &self.backing_kind())
            .finish()
    }
}

impl ScalarField {
    pub fn analytic(surface: &Surface, f: impl Fn(Point) -> Jet + Send + Sync + 'static) -> Self {
        ScalarField {
            surface: surface.clone(),
            backing: Backing::Analytic {
                f: Arc::new(f),
                exact: true,
            },
            support: None,
        }
    }

    /// Closed-form chain rule over other fields; `exact` records whether the
    /// inputs' partials were themselves exact.
    pub fn composite(
        surface: &Surface,
        exact: bool,
        f: impl Fn(Point) -> Jet + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            surface: surface.clone(),
            backing: Backing::Analytic {
                f: Arc::new(f),
                exact,
            },
            support: None,
        }
    }

    pub fn sampled(surface: &Surface, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        let step = DEFAULT_FD_STEP * surface.length(0).min(surface.length(1));
        ScalarField {
            surface: surface.clone(),
            backing: Backing::Sampled {
                f: Arc::new(f),
                step,
            },
            support: None,
        }
    }

    pub fn from_expr(surface: &Surface, src: &str) -> Result<Self> {
        let e = Expr::parse(src, surface.kind())?;
        Ok(ScalarField::analytic(surface, move |x| e.eval(x)))
    }

    pub fn constant(surface: &Surface, c: f64) -> Self {
        ScalarField::analytic(surface, move |_| Jet::constant(c))
    }

    pub fn from_grid(surface: &Surface, field: GridField) -> Self {
        ScalarField {
            surface: surface.clone(),
            backing: Backing::Grid(Arc::new(field)),
            support: None,
        }
    }

    /// Sample any field at the nodes of a grid.
    pub fn to_grid(&self, grid: &Grid, interp: Interp) -> GridField {
        GridField::new(grid.clone(), grid.sample(|x| self.value(x)), interp)
    }

    pub fn with_support(mut self, region: Region) -> Self {
        self.support = Some(region);
        self
    }

    pub fn support(&self) -> Option<&Region> {
        self.support.as_ref()
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn backing_kind(&self) -> &'static str {
        match &self.backing {
            Backing::Analytic { exact: true, .. } => "analytic",
            Backing::Analytic { exact: false, .. } => "composite",
            Backing::Sampled { .. } => "sampled",
            Backing::Grid(_) => "grid",
            Backing::Bracket { .. } => "bracket",
        }
    }

    /// True when value and partials are closed-form.
    pub fn is_analytic(&self) -> bool {
        matches!(self.backing, Backing::Analytic { exact: true, .. })
    }

    pub fn grid_field(&self) -> Option<&GridField> {
        match &self.backing {
            Backing::Grid(g) => Some(g),
            _ => None,
        }
    }

    /// The operands of a bracket field.
    pub fn bracket_operands(&self) -> Option<(&ScalarField, &ScalarField)> {
        match &self.backing {
            Backing::Bracket { f, g, .. } => Some((f, g)),
            _ => None,
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        let x = self.surface.normalize(x);
        match &self.backing {
            Backing::Analytic { f, .. } => f(x).value,
            Backing::Sampled { f, .. } => f(x),
            Backing::Grid(g) => g.value(x),
            Backing::Bracket { f, g, .. } => raw_bracket(&f.jet(x), &g.jet(x), &self.surface),
        }
    }

    pub fn jet(&self, x: Point) -> Jet {
        let x = self.surface.normalize(x);
        match &self.backing {
            Backing::Analytic { f, .. } => f(x),
            Backing::Grid(g) => {
                let [v, dp, dq] = g.eval3(x);
                Jet::new(v, dp, dq)
            }
            Backing::Sampled { step, .. } | Backing::Bracket { step, .. } => {
                let v = self.value(x);
                let [dp, dq] = self.centered_partials(x, *step);
                Jet::new(v, dp, dq)
            }
        }
    }

    /// Centered differences of the value with step `h` (shrunk near the
    /// sphere poles so the stencil stays in the chart).
    pub fn centered_partials(&self, x: Point, h: f64) -> [f64; 2] {
        let hp = if self.surface.kind() == SurfaceKind::RoundSphere {
            h.min(0.5 * (1.0 - x.p.abs())).max(f64::MIN_POSITIVE)
        } else {
            h
        };
        let dp = (self.value(x.offset(hp, 0.0)) - self.value(x.offset(-hp, 0.0))) / (2.0 * hp);
        let dq = (self.value(x.offset(0.0, h)) - self.value(x.offset(0.0, -h))) / (2.0 * h);
        [dp, dq]
    }

    pub fn exact_partials(&self) -> bool {
        matches!(self.backing, Backing::Analytic { exact: true, .. })
    }

    fn combine(
        &self,
        other: &ScalarField,
        op: impl Fn(Jet, Jet) -> Jet + Send + Sync + 'static,
    ) -> Result<ScalarField> {
        same_surface(self, other)?;
        let (a, b) = (self.clone(), other.clone());
        let exact = a.exact_partials() && b.exact_partials();
        Ok(ScalarField {
            surface: self.surface.clone(),
            backing: Backing::Analytic {
                f: Arc::new(move |x| op(a.jet(x), b.jet(x))),
                exact,
            },
            support: None,
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.combine(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField> {
        self.combine(other, |a, b| a * b)
    }

    /// `a·F + c`.
    pub fn affine(&self, a: f64, c: f64) -> ScalarField {
        self.map(move |v| (a * v + c, a))
    }

    /// `u ∘ F` for a one-variable map returning value and derivative.
    pub fn map(&self, u: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> ScalarField {
        let a = self.clone();
        let exact = a.exact_partials();
        ScalarField {
            surface: self.surface.clone(),
            backing: Backing::Analytic {
                f: Arc::new(move |x| {
                    let j = a.jet(x);
                    let (v, d) = u(j.value);
                    j.compose(v, d)
                }),
                exact,
            },
            support: None,
        }
    }
}

fn same_surface(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.surface != b.surface {
        return Err(Error::SurfaceMismatch);
    }
    Ok(())
}

fn raw_bracket(f: &Jet, g: &Jet, surface: &Surface) -> f64 {
    (f.dq * g.dp - f.dp * g.dq) / surface.density()
}

/// `{F,G}` with the default difference step for its own partials.
pub fn poisson_bracket(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    let s = f.surface();
    poisson_bracket_with_step(f, g, 1e-4 * s.length(0).min(s.length(1)))
}

/// `{F,G}` whose partials (needed for nested brackets) use step `h`.
pub fn poisson_bracket_with_step(f: &ScalarField, g: &ScalarField, h: f64) -> Result<ScalarField> {
    same_surface(f, g)?;
    Ok(ScalarField {
        surface: f.surface.clone(),
        backing: Backing::Bracket {
            f: Box::new(f.clone()),
            g: Box::new(g.clone()),
            step: h,
        },
        support: None,
    })
}

/// Sup-norm report for a field.
#[derive(Clone, Debug, Serialize)]
pub struct BracketReport {
    /// Largest `|F|` found on the grid after local refinement.
    pub sup_norm: f64,
    /// Lipschitz safety margin `L·h/2` (zero when the maximum is exact).
    pub margin: f64,
    pub argmax: [f64; 2],
    pub grid: [usize; 2],
    pub spacing: [f64; 2],
    /// True when the sup is exact (piecewise-linear data).
    pub exact: bool,
}

impl BracketReport {
    pub fn upper(&self) -> f64 {
        self.sup_norm + self.margin
    }

    pub fn lower(&self) -> f64 {
        (self.sup_norm - self.margin).max(0.0)
    }

    pub fn argmax_point(&self) -> Point {
        Point::from(self.argmax)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SupOptions {
    /// Cells per axis of the evaluation grid.
    pub n: usize,
    /// Pattern-search levels around the grid argmax.
    pub refine_levels: usize,
}

impl Default for SupOptions {
    fn default() -> Self {
        SupOptions {
            n: 256,
            refine_levels: 12,
        }
    }
}

pub fn sup_norm(f: &ScalarField) -> BracketReport {
    sup_norm_with(f, SupOptions::default())
}

pub fn sup_norm_with(f: &ScalarField, opts: SupOptions) -> BracketReport {
    if let Some(r) = exact_piecewise_linear_sup(f) {
        return r;
    }
    let surface = f.surface();
    let grid = Grid::for_surface(surface, opts.n);
    let vals = grid.sample(|x| f.value(x).abs());
    let (k, best) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });

    // Lipschitz estimate of |F| from neighbouring nodes.
    let h = grid.spacing();
    let m0 = grid.nodes(0);
    let lip = (0..grid.nodes(1))
        .into_par_iter()
        .map(|j| {
            let mut l: f64 = 0.0;
            for i in 0..m0 {
                let v = vals[grid.index(i, j)];
                let a = vals[grid.index_wrapped(i as isize + 1, j as isize)];
                let b = vals[grid.index_wrapped(i as isize, j as isize + 1)];
                l = l.max(((a - v) / h[0]).hypot((b - v) / h[1]));
            }
            l
        })
        .reduce(|| 0.0, f64::max);

    let mut x = grid.node_at(k);
    let mut v = best;
    let bx = surface.sampling_box();
    let clamp = |y: Point| -> Point {
        let mut c = [y.p, y.q];
        for a in 0..2 {
            if !surface.periodic()[a] {
                c[a] = c[a].clamp(bx[a][0], bx[a][1]);
            }
        }
        Point::from(c)
    };
    let mut step = [0.5 * h[0], 0.5 * h[1]];
    for _ in 0..opts.refine_levels {
        loop {
            let mut moved = false;
            for (dp, dq) in [(1., 0.), (-1., 0.), (0., 1.), (0., -1.), (1., 1.), (1., -1.), (-1., 1.), (-1., -1.)] {
                let y = clamp(x.offset(dp * step[0], dq * step[1]));
                let w = f.value(y).abs();
                if w > v {
                    v = w;
                    x = y;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        step = [0.5 * step[0], 0.5 * step[1]];
    }
    let x = surface.normalize(x);
    BracketReport {
        sup_norm: v,
        margin: 0.5 * lip * h[0].hypot(h[1]),
        argmax: x.coords(),
        grid: grid.n,
        spacing: h,
        exact: false,
    }
}

/// Exact sup for piecewise-linear grid fields and brackets of two
/// piecewise-linear fields on a shared grid.
fn exact_piecewise_linear_sup(f: &ScalarField) -> Option<BracketReport> {
    let linear = |s: &ScalarField| -> Option<Arc<GridField>> {
        match &s.backing {
            Backing::Grid(g) if g.interp == Interp::Linear => Some(g.clone()),
            _ => None,
        }
    };
    if let Some(g) = linear(f) {
        let (k, v) = argmax_abs(&g.values);
        return Some(BracketReport {
            sup_norm: v,
            margin: 0.0,
            argmax: g.grid.node_at(k).coords(),
            grid: g.grid.n,
            spacing: g.grid.spacing(),
            exact: true,
        });
    }
    let (a, b) = f.bracket_operands()?;
    let (ga, gb) = (linear(a)?, linear(b)?);
    if ga.grid != gb.grid {
        return None;
    }
    let tb = GridField::triangle_brackets(&ga, &gb, f.surface.density());
    let (t, v) = argmax_abs(&tb);
    Some(BracketReport {
        sup_norm: v,
        margin: 0.0,
        argmax: ga.grid.triangle_centroid(t).coords(),
        grid: ga.grid.n,
        spacing: ga.grid.spacing(),
        exact: true,
    })
}

fn argmax_abs(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, 0.0), |acc, (k, &x)| if x.abs() > acc.1 { (k, x.abs()) } else { acc })
}

/// A quadrature value with its step-halving error estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// `∫ F dG` along a polyline in the chart.
///
/// Uses the trapezoid rule on `F·ΔG` and the same rule on the path with
/// every segment halved; the halved sum is returned and the difference is
/// the error estimate. Segments follow the shortest periodic displacement.
pub fn line_integral_fdg(
    f: &ScalarField,
    g: &ScalarField,
    path: &[Point],
    closed: bool,
) -> Result<Quadrature> {
    same_surface(f, g)?;
    if path.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "path needs at least 3 points, got {}",
            path.len()
        )));
    }
    let s = f.surface();
    let mut pts = Vec::with_capacity(path.len() + 1);
    pts.push(path[0]);
    for k in 1..path.len() {
        let prev: Point = pts[k - 1];
        let d = s.delta(path[k - 1], path[k]);
        pts.push(prev.offset(d[0], d[1]));
    }
    if closed {
        let last = *pts.last().unwrap();
        let d = s.delta(last, path[0]);
        if d[0] != 0.0 || d[1] != 0.0 {
            pts.push(last.offset(d[0], d[1]));
        }
    }
    let (coarse, fine) = (0..pts.len() - 1)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (pts[k], pts[k + 1]);
            let m = Point::new(0.5 * (a.p + b.p), 0.5 * (a.q + b.q));
            let (fa, fb, fm) = (f.value(a), f.value(b), f.value(m));
            let (ga, gb, gm) = (g.value(a), g.value(b), g.value(m));
            let c = 0.5 * (fa + fb) * (gb - ga);
            let w = 0.5 * (fa + fm) * (gm - ga) + 0.5 * (fm + fb) * (gb - gm);
            (c, w)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    Ok(Quadrature {
        value: fine,
        error: (fine - coarse).abs(),
    })
}

const GL4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_W: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Composite 4-point Gauss–Legendre nodes and weights on `[a,b]` with `m` panels.
pub fn gauss_legendre(a: f64, b: f64, m: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / m as f64;
    let mut out = Vec::with_capacity(4 * m);
    for k in 0..m {
        let c = a + (k as f64 + 0.5) * h;
        for (x, w) in GL4_X.iter().zip(GL4_W) {
            out.push((c + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

fn chart_integral(f: &(dyn Fn(Point) -> f64 + Sync), surface: &Surface, region: &Region, m: usize) -> Result<f64> {
    let tensor = |p: [f64; 2], q: [f64; 2]| -> f64 {
        let gp = gauss_legendre(p[0], p[1], m);
        let gq = gauss_legendre(q[0], q[1], m);
        gq.par_iter()
            .map(|&(y, wy)| gp.iter().map(|&(x, wx)| wx * f(Point::new(x, y))).sum::<f64>() * wy)
            .sum()
    };
    Ok(match &region.shape {
        Shape::Rectangle { .. } | Shape::Quadrilateral { .. } => {
            let (p, q) = region.as_rectangle()?.expect("rectangle-like");
            tensor(p, q)
        }
        Shape::Disc { center, radius } => {
            let gr = gauss_legendre(0.0, *radius, m);
            let gt = gauss_legendre(0.0, 2.0 * std::f64::consts::PI, 2 * m);
            gr.par_iter()
                .map(|&(r, wr)| {
                    gt.iter()
                        .map(|&(t, wt)| wt * f(center.offset(r * t.cos(), r * t.sin())))
                        .sum::<f64>()
                        * wr
                        * r
                })
                .sum()
        }
        Shape::ComplementOf(inner) => {
            let e = surface.extents();
            tensor(e[0], e[1]) - chart_integral(f, surface, inner, m)?
        }
        Shape::Union(parts) => {
            let mut s = 0.0;
            for r in parts {
                s += chart_integral(f, surface, r, m)?;
            }
            s
        }
    })
}

/// `∫_region F ω` by composite Gauss–Legendre with `m` and `2m` panels.
pub fn area_integral(f: &ScalarField, region: &Region) -> Result<Quadrature> {
    area_integral_with(f, region, 32)
}

pub fn area_integral_with(f: &ScalarField, region: &Region, m: usize) -> Result<Quadrature> {
    let s = f.surface();
    crate::geometry::area(s, region)?;
    let rho = s.density();
    let eval = |x: Point| f.value(x);
    let coarse = chart_integral(&eval, s, region, m)? * rho;
    let fine = chart_integral(&eval, s, region, 2 * m)? * rho;
    Ok(Quadrature {
        value: fine,
        error: (fine - coarse).abs().max(1e-14 * fine.abs()),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MonomialNorm {
    pub monomial: String,
    pub report: BracketReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct IteratedReport {
    pub degree: usize,
    pub monomials: Vec<MonomialNorm>,
    /// Sum of the monomial sup-norms.
    pub total: f64,
    /// Sum of the monomial margins.
    pub margin: f64,
}

/// Lie monomials of degree `n` in `A`, `B`, each a left-nested word.
pub fn lie_monomials(n: usize) -> Result<Vec<&'static str>> {
    match n {
        2 => Ok(vec!["AB"]),
        3 => Ok(vec!["ABA", "ABB"]),
        4 => Ok(vec!["ABAA", "ABAB", "ABBB"]),
        _ => Err(Error::InvalidArgument(format!(
            "iterated bracket degree must be 2..=4, got {n}"
        ))),
    }
}

/// `Q_N(F,G)`: sum of sup-norms of all degree-`n` Lie monomials, evaluated
/// by nested brackets whose inner partials use differences with step `h`.
pub fn iterated_bracket_norm(
    f: &ScalarField,
    g: &ScalarField,
    n: usize,
    h: f64,
    opts: SupOptions,
) -> Result<IteratedReport> {
    same_surface(f, g)?;
    let words = lie_monomials(n)?;
    let mut monomials = Vec::new();
    for w in words {
        let mut acc = poisson_bracket_with_step(f, g, h)?;
        let mut name = "{A,B}".to_string();
        for c in w.chars().skip(2) {
            let next = if c == 'A' { f } else { g };
            acc = poisson_bracket_with_step(&acc, next, h)?;
            name = format!("{{{name},{c}}}");
        }
        monomials.push(MonomialNorm {
            monomial: name,
            report: sup_norm_with(&acc, opts),
        });
    }
    let total = monomials.iter().map(|m| m.report.sup_norm).sum();
    let margin = monomials.iter().map(|m| m.report.margin).sum();
    Ok(IteratedReport {
        degree: n,
        monomials,
        total,
        margin,
    })
}

/// True iff `1 − s·{F,G} > 0` at every node of an `n × n` evaluation grid.
pub fn deformation_positivity(f: &ScalarField, g: &ScalarField, s: f64, n: usize) -> Result<bool> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("s must be non-negative, got {s}")));
    }
    let b = poisson_bracket(f, g)?;
    let grid = Grid::for_surface(f.surface(), n);
    let vals = grid.sample(|x| 1.0 - s * b.value(x));
    Ok(vals.iter().all(|&v| v > 0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub applicable: bool,
    pub steps: [f64; 2],
    /// Max discrepancy over the points, relative to the largest exact partial.
    pub discrepancy: [f64; 2],
    /// `discrepancy[0] / discrepancy[1]`; ≈ 4 for a second-order stencil.
    pub ratio: f64,
}

/// Compare analytic partials with centered differences at 10³ random points.
pub fn fd_consistency_check(f: &ScalarField, seed: u64) -> FdReport {
    let scale = f.surface().length(0).min(f.surface().length(1));
    let steps = [1e-3 * scale, 5e-4 * scale];
    if !f.is_analytic() {
        return FdReport {
            applicable: false,
            steps,
            discrepancy: [f64::NAN; 2],
            ratio: f64::NAN,
        };
    }
    let mut rng = stream_rng(seed, 0);
    let b = f.surface().sampling_box();
    let margin = 2.0 * steps[0];
    let pts: Vec<Point> = (0..1000)
        .map(|_| {
            Point::new(
                rng.gen_range(b[0][0] + margin..b[0][1] - margin),
                rng.gen_range(b[1][0] + margin..b[1][1] - margin),
            )
        })
        .collect();
    let exact: Vec<Jet> = pts.iter().map(|&x| f.jet(x)).collect();
    let norm = exact
        .iter()
        .map(|j| j.dp.abs().max(j.dq.abs()))
        .fold(0.0, f64::max);
    let mut disc = [0.0; 2];
    for (s, &h) in steps.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (x, j) in pts.iter().zip(&exact) {
            let [dp, dq] = f.centered_partials(*x, h);
            worst = worst.max((dp - j.dp).abs()).max((dq - j.dq).abs());
        }
        disc[s] = if norm > 0.0 { worst / norm } else { worst };
    }
    FdReport {
        applicable: true,
        steps,
        discrepancy: disc,
        ratio: if disc[1] > 0.0 { disc[0] / disc[1] } else { f64::NAN },
    }
}
