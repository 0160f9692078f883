//! Explicit function families with certified bracket bounds.
//!
//! Every smoothing uses C² quintic blends of the derivative: between two
//! knots the slope moves from `d0` to `d1` along `S(x) = 6x⁵ − 15x⁴ + 10x³`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::certificates::{check_admissible_as, ClassKind, ConstraintClass};
use crate::dynamics::{hamiltonian_flow, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{gauss_legendre, sup_norm_with, Jet, ScalarField, SupOptions};
use crate::geometry::{Point, PointSet, Scene, Surface, SurfaceKind};
use crate::grid::{Grid, GridField, Interp};

/// Quintic smoothstep `S` with `S(0) = 0`, `S(1) = 1` and vanishing first
/// and second derivatives at both ends.
pub fn smoother(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

pub fn smoother_deriv(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    30.0 * x * x * (1.0 - x) * (1.0 - x)
}

/// `∫₀ˣ S`.
pub fn smoother_integral(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (2.5 + x * (-3.0 + x))
}

/// One-variable C² function given by its slope at knots; between knots the
/// slope blends with `S`, outside it extends linearly.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeProfile {
    pub knots: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Value at each knot.
    pub base: Vec<f64>,
}

impl SlopeProfile {
    /// Profile with value `y0` at the first knot.
    pub fn new(y0: f64, knots: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != slopes.len() {
            return Err(Error::InvalidArgument("knots and slopes must match".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("knots must increase strictly".into()));
        }
        let mut base = vec![y0];
        for k in 0..knots.len() - 1 {
            let h = knots[k + 1] - knots[k];
            base.push(base[k] + 0.5 * h * (slopes[k] + slopes[k + 1]));
        }
        Ok(SlopeProfile { knots, slopes, base })
    }

    /// Value and derivative.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return (self.base[0] + self.slopes[0] * (x - self.knots[0]), self.slopes[0]);
        }
        if x >= self.knots[n - 1] {
            return (
                self.base[n - 1] + self.slopes[n - 1] * (x - self.knots[n - 1]),
                self.slopes[n - 1],
            );
        }
        let k = self.knots.partition_point(|&a| a <= x) - 1;
        let (a, b) = (self.knots[k], self.knots[k + 1]);
        let (d0, d1) = (self.slopes[k], self.slopes[k + 1]);
        let h = b - a;
        let t = (x - a) / h;
        (
            self.base[k] + d0 * (x - a) + (d1 - d0) * h * smoother_integral(t),
            d0 + (d1 - d0) * smoother(t),
        )
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Largest `|u'|` (attained at a knot since blends are monotone).
    pub fn max_slope(&self) -> f64 {
        self.slopes.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn end_value(&self) -> f64 {
        *self.base.last().expect("profile has knots")
    }
}

/// Guarantee re-measurement record.
#[derive(Clone, Debug, Serialize)]
pub struct Guarantee {
    pub quantity: String,
    pub bound: f64,
    pub measured: f64,
    pub holds: bool,
}

impl Guarantee {
    pub fn new(quantity: impl Into<String>, bound: f64, measured: f64, tol: f64) -> Self {
        Guarantee {
            quantity: quantity.into(),
            bound,
            measured,
            holds: measured <= bound + tol,
        }
    }
}

/// Error if any guarantee fails.
pub fn enforce(guarantees: &[Guarantee]) -> Result<()> {
    for g in guarantees {
        if !g.holds {
            return Err(Error::Guarantee(format!(
                "{}: measured {} exceeds bound {}",
                g.quantity, g.measured, g.bound
            )));
        }
    }
    Ok(())
}

/// `u: ℝ → [0,1]`, zero up to `δ`, one from `1 − δ`, non-decreasing.
#[derive(Clone, Debug, Serialize)]
pub struct StepFunction {
    pub delta: f64,
    pub window: f64,
    /// Largest slope of the blend.
    pub bound: f64,
    profile: SlopeProfile,
}

impl StepFunction {
    pub fn eval(&self, s: f64) -> (f64, f64) {
        if s <= self.delta {
            (0.0, 0.0)
        } else if s >= 1.0 - self.delta {
            (1.0, 0.0)
        } else {
            self.profile.eval(s)
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    pub fn deriv(&self, s: f64) -> f64 {
        self.eval(s).1
    }

    /// Largest `u'` on a uniform sample of `[0,1]` with `n` intervals.
    pub fn measured_max_slope(&self, n: usize) -> f64 {
        (0..=n).map(|i| self.deriv(i as f64 / n as f64)).fold(0.0, f64::max)
    }

    /// `u ∘ F`.
    pub fn apply(&self, f: &ScalarField) -> ScalarField {
        let u = self.clone();
        f.map(move |v| u.eval(v))
    }
}

/// Step with transition windows of width `δ/4`.
pub fn smooth_step(delta: f64) -> Result<StepFunction> {
    smooth_step_with(delta, 0.25 * delta)
}

pub fn smooth_step_with(delta: f64, window: f64) -> Result<StepFunction> {
    if !(delta > 0.0 && delta < 0.25) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1/4), got {delta}")));
    }
    let inner = 1.0 - 2.0 * delta;
    if !(window > 0.0 && 2.0 * window < inner) {
        return Err(Error::InvalidArgument(format!("bad transition window {window}")));
    }
    let c = 1.0 / (inner - window);
    let profile = SlopeProfile::new(
        0.0,
        vec![delta, delta + window, 1.0 - delta - window, 1.0 - delta],
        vec![0.0, c, c, 0.0],
    )?;
    Ok(StepFunction {
        delta,
        window,
        bound: c,
        profile,
    })
}

/// Target set of a plane map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapTarget {
    /// `{s ≥ 0, t ≥ 0, s + t ≤ 1}`.
    Triangle,
}

/// One radial compression about a vertex of the inner triangle, pushing
/// the far side of the opposite line onto it.
#[derive(Clone, Debug, Serialize)]
struct RadialFold {
    vertex: [f64; 2],
    normal: [f64; 2],
    /// `c − n·v` for the line `n·y = c`.
    offset: f64,
    /// Exact value of the coordinate pinned on the line, if any.
    pin: Option<(usize, f64)>,
}

/// The map `T = Ψ∘Φ₁∘Φ₂∘Φ₃ : ℝ² → Δ` with analytic Jacobian.
#[derive(Clone, Debug, Serialize)]
pub struct PlaneMap {
    pub target: MapTarget,
    pub kappa: f64,
    /// κ actually used (large κ is clamped to a feasible value).
    pub kappa_effective: f64,
    pub k: f64,
    pub delta: f64,
    /// Slope cap of the radial profile `ψ`.
    pub slope_cap: f64,
    psi: SlopeProfile,
    folds: [RadialFold; 3],
}

/// `K⁸(1 − 3δ)²` with `δ = 1 − 1/K`; the squared slope budget per fold is
/// its cube root.
fn fold_budget(k: f64) -> f64 {
    let d = 1.0 - 1.0 / k;
    k.powi(8) * (1.0 - 3.0 * d).powi(2)
}

const MIN_BUDGET: f64 = 1.02;

fn feasible_kappa(kappa: f64) -> f64 {
    // The budget rises from 1 at K = 1, peaks, then falls to 0 at K = 3/2
    // (where Δ' degenerates). Past the peak, clamp K so the budget stays at
    // MIN_BUDGET.
    let (mut a, mut b) = (1.0, 1.5);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if fold_budget(m1) < fold_budget(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    let peak = 0.5 * (a + b);
    let k = (1.0 + kappa).powf(0.125);
    if k <= peak || (k < 1.5 && fold_budget(k) >= MIN_BUDGET) {
        return kappa;
    }
    let (mut lo, mut hi) = (peak, k.min(1.5));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fold_budget(mid) >= MIN_BUDGET {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.powi(8) - 1.0
}

impl PlaneMap {
    fn psi(&self, tau: f64) -> (f64, f64) {
        if tau <= 0.5 {
            (tau, 1.0)
        } else if tau >= 1.0 {
            (1.0, 0.0)
        } else {
            self.psi.eval(tau)
        }
    }

    /// Apply one fold, returning the image and its Jacobian.
    fn fold(&self, f: &RadialFold, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let d = [x[0] - f.vertex[0], x[1] - f.vertex[1]];
        let tau = (f.normal[0] * d[0] + f.normal[1] * d[1]) / f.offset;
        if tau <= 0.5 {
            return (x, [[1.0, 0.0], [0.0, 1.0]]);
        }
        let (ps, dps) = self.psi(tau);
        let g = ps / tau;
        let dg = (dps * tau - ps) / (tau * tau);
        let mut y = [f.vertex[0] + g * d[0], f.vertex[1] + g * d[1]];
        if tau >= 1.0 {
            if let Some((axis, v)) = f.pin {
                y[axis] = v;
            }
        }
        let c = dg / f.offset;
        let j = [
            [g + c * d[0] * f.normal[0], c * d[0] * f.normal[1]],
            [c * d[1] * f.normal[0], g + c * d[1] * f.normal[1]],
        ];
        (y, j)
    }

    /// `T(s,t)` and `dT`.
    pub fn eval_with_jacobian(&self, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut y = x;
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        for f in self.folds.iter().rev() {
            let (z, j) = self.fold(f, y);
            jac = matmul(j, jac);
            y = z;
        }
        let scale = 1.0 / (1.0 - 3.0 * self.delta);
        let out = [(y[0] - self.delta) * scale, (y[1] - self.delta) * scale];
        let jac = [
            [scale * jac[0][0], scale * jac[0][1]],
            [scale * jac[1][0], scale * jac[1][1]],
        ];
        (out, jac)
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        self.eval_with_jacobian(x).0
    }

    pub fn jacobian_det(&self, x: [f64; 2]) -> f64 {
        let (_, j) = self.eval_with_jacobian(x);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// Upper bound on the Jacobian determinant implied by the slope cap.
    pub fn det_bound(&self) -> f64 {
        self.slope_cap.powi(6) / (1.0 - 3.0 * self.delta).powi(2)
    }

    pub fn in_target(&self, y: [f64; 2], tol: f64) -> bool {
        y[0] >= -tol && y[1] >= -tol && y[0] + y[1] <= 1.0 + tol
    }
}

fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Map of the plane onto `Δ` collapsing `δ`-margins onto the sides, with
/// Jacobian determinant at most `1 + κ`.
pub fn triangle_cutoff_map(kappa: f64) -> Result<PlaneMap> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let kappa_effective = feasible_kappa(kappa);
    let k = (1.0 + kappa_effective).powf(0.125);
    let delta = 1.0 - 1.0 / k;
    let m_max = fold_budget(k).powf(1.0 / 6.0);
    let m = 1.0 + 0.9 * (m_max - 1.0);
    let w = (m - 1.0) / (1.0 + 2.0 * (m - 1.0));
    let psi = SlopeProfile::new(0.5, vec![0.5, 0.5 + w, 1.0 - w, 1.0], vec![1.0, m, m, 0.0])?;
    let fold = |vertex: [f64; 2], normal: [f64; 2], c: f64, pin: Option<(usize, f64)>| RadialFold {
        vertex,
        normal,
        offset: c - (normal[0] * vertex[0] + normal[1] * vertex[1]),
        pin,
    };
    let folds = [
        fold([1.0 - 2.0 * delta, delta], [1.0, 0.0], delta, Some((0, delta))),
        fold([delta, 1.0 - 2.0 * delta], [0.0, 1.0], delta, Some((1, delta))),
        fold([delta, delta], [1.0, 1.0], 1.0 - delta, None),
    ];
    Ok(PlaneMap {
        target: MapTarget::Triangle,
        kappa,
        kappa_effective,
        k,
        delta,
        slope_cap: m,
        psi,
        folds,
    })
}

fn require_admissible(f: &ScalarField, g: &ScalarField, scene: &Scene, class: &ConstraintClass) -> Result<()> {
    let report = check_admissible_as(f, g, scene, class);
    if let Some(c) = report.worst() {
        return Err(Error::NotAdmissible(format!(
            "{} violated by {}",
            c.name, c.worst_violation
        )));
    }
    Ok(())
}

/// `(T₁(F,G), T₂(F,G))`, turning an `F₃` pair into an `F'₃` pair while
/// inflating the bracket by at most `1 + κ`.
pub fn apply_cutoff_pb3(
    f: &ScalarField,
    g: &ScalarField,
    kappa: f64,
    scene: &Scene,
) -> Result<(ScalarField, ScalarField)> {
    if !scene.class.kind.is_pb3() {
        return Err(Error::InvalidArgument("scene is not a pb3 scene".into()));
    }
    let mut class = scene.class.clone();
    class.kind = ClassKind::F3;
    require_admissible(f, g, scene, &class)?;
    let map = Arc::new(triangle_cutoff_map(kappa)?);
    let exact = f.exact_partials() && g.exact_partials();
    let component = |axis: usize| {
        let (a, b, m) = (f.clone(), g.clone(), map.clone());
        ScalarField::composite(f.surface(), exact, move |x| {
            let (ja, jb) = (a.jet(x), b.jet(x));
            let (y, j) = m.eval_with_jacobian([ja.value, jb.value]);
            Jet::new(
                y[axis],
                j[axis][0] * ja.dp + j[axis][1] * jb.dp,
                j[axis][0] * ja.dq + j[axis][1] * jb.dq,
            )
        })
    };
    Ok((component(0), component(1)))
}

/// The quadrilateral construction with its certified bound.
#[derive(Clone, Debug)]
pub struct QuadPair {
    pub f: ScalarField,
    pub g: ScalarField,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Slope bound `γ = max(1/α, 1/(β−α)) + δ`.
    pub gamma: f64,
    /// `‖{F,G}‖ ≤ γ²`.
    pub guarantee: f64,
    /// `max(1/A, 1/(B−A))`.
    pub target: f64,
    /// True when `B/4 < A < 3B/4`, where the square construction cannot
    /// reach `target`.
    pub gap_regime: bool,
    /// Chart corner of `Π` (normalized coordinate origin).
    pub origin: Point,
    /// Chart side length of `Π`.
    pub side: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadRecord {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub guarantee: f64,
    pub target: f64,
    pub gap_regime: bool,
}

impl QuadPair {
    pub fn record(&self) -> QuadRecord {
        QuadRecord {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            delta: self.delta,
            gamma: self.gamma,
            guarantee: self.guarantee,
            target: self.target,
            gap_regime: self.gap_regime,
        }
    }

    /// Corners of `Π` in chart coordinates, counter-clockwise from the origin.
    pub fn corners(&self) -> [Point; 4] {
        let o = self.origin;
        let a = self.side;
        [o, o.offset(a, 0.0), o.offset(a, a), o.offset(0.0, a)]
    }

    /// Sides `a₁` (left), `a₂` (bottom), `a₃` (right), `a₄` (top).
    pub fn sides(&self) -> [PointSet; 4] {
        let [c0, c1, c2, c3] = self.corners();
        [
            PointSet::segment(c0, c3),
            PointSet::segment(c0, c1),
            PointSet::segment(c1, c2),
            PointSet::segment(c3, c2),
        ]
    }

    /// Re-measure `‖{F,G}‖ ≤ γ²` on an `n²` grid.
    pub fn verify(&self, n: usize) -> Result<Vec<Guarantee>> {
        let b = crate::fields::poisson_bracket(&self.f, &self.g)?;
        let r = sup_norm_with(&b, SupOptions { n, refine_levels: 12 });
        Ok(vec![Guarantee::new("sup |{F,G}|", self.guarantee, r.sup_norm, 1e-9)])
    }
}

/// Normalized coordinate along one axis: `P = √ρ (p − origin)`, wrapped on
/// periodic axes at the middle of the gap outside `K`.
#[derive(Clone, Copy, Debug)]
struct AxisMap {
    origin: f64,
    scale: f64,
    /// Periodic length in normalized units (0 for non-periodic axes).
    period: f64,
    /// Upper end of the wrapping window.
    wrap_hi: f64,
}

impl AxisMap {
    fn apply(&self, x: f64) -> f64 {
        let y = self.scale * (x - self.origin);
        if self.period > 0.0 {
            self.wrap_hi - (self.wrap_hi - y).rem_euclid(self.period)
        } else {
            y
        }
    }
}

/// `F = v·u_δ(P)`, `G = v·u_δ(Q)` on a square of side `β` around
/// `Π = [0, √A]²`, in `F₄(a₁, a₃, a₂, a₄)`.
pub fn quadrilateral_pair(a: f64, b: f64, beta: f64, delta: f64, surface: &Surface) -> Result<QuadPair> {
    if !(a > 0.0 && b > a && delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < A < B and delta > 0, got A = {a}, B = {b}, delta = {delta}"
        )));
    }
    let alpha = a.sqrt();
    let root_b = b.sqrt();
    if !(beta > alpha && beta < root_b) {
        return Err(Error::InvalidArgument(format!(
            "beta must lie in (sqrt(A), sqrt(B)) = ({alpha}, {root_b}), got {beta}"
        )));
    }
    if surface.kind() == SurfaceKind::FlatTorus && (surface.area() - b).abs() > 1e-9 * b {
        return Err(Error::InvalidArgument(format!(
            "torus area {} differs from B = {b}",
            surface.area()
        )));
    }
    let eps = (root_b - beta) / 4.0;
    let rho = surface.density();
    let scale = rho.sqrt();
    let need = beta + 2.0 * eps;
    let mut axes = [AxisMap {
        origin: 0.0,
        scale,
        period: 0.0,
        wrap_hi: 0.0,
    }; 2];
    let bx = surface.sampling_box();
    for axis in 0..2 {
        let [lo, hi] = bx[axis];
        if surface.periodic()[axis] {
            let period = scale * surface.length(axis);
            if period < need {
                return Err(Error::InvalidArgument(format!(
                    "the square K does not fit: axis {axis} has length {period} < {need}"
                )));
            }
            axes[axis].origin = lo;
            axes[axis].period = period;
            axes[axis].wrap_hi = beta + eps + 0.5 * (period - need);
        } else {
            let pad = surface.padding();
            let usable = scale * (hi - lo - 2.0 * pad);
            if usable < need {
                return Err(Error::InvalidArgument(format!(
                    "the square K does not fit: axis {axis} has usable length {usable} < {need}"
                )));
            }
            axes[axis].origin = 0.5 * (lo + hi) - 0.5 * beta / scale;
        }
    }

    let gamma = (1.0 / alpha).max(1.0 / (beta - alpha)) + delta;
    let w1 = (0.25 * delta).min(0.9 * (alpha - 1.0 / gamma)).min(0.25 * alpha);
    let w2 = (0.25 * delta)
        .min(0.9 * (beta - alpha - 1.0 / gamma))
        .min(0.25 * (beta - alpha));
    let c1 = 1.0 / (alpha - w1);
    let c2 = 1.0 / (beta - alpha - w2);
    let u = Arc::new(SlopeProfile::new(
        0.0,
        vec![0.0, w1, alpha - w1, alpha, alpha + w2, beta - w2, beta],
        vec![0.0, c1, c1, 0.0, -c2, -c2, 0.0],
    )?);
    let v1 = Arc::new(SlopeProfile::new(
        0.0,
        vec![-0.5 * eps, -0.25 * eps, 0.0, beta, beta + 0.25 * eps, beta + 0.5 * eps],
        vec![0.0, 4.0 / eps, 0.0, 0.0, -4.0 / eps, 0.0],
    )?);
    let clamp_u = {
        let u = u.clone();
        move |x: f64| if x <= 0.0 || x >= beta { (0.0, 0.0) } else { u.eval(x) }
    };
    let clamp_v = {
        let v1 = v1.clone();
        move |x: f64| {
            if (0.0..=beta).contains(&x) {
                (1.0, 0.0)
            } else if x <= -0.5 * eps || x >= beta + 0.5 * eps {
                (0.0, 0.0)
            } else {
                v1.eval(x)
            }
        }
    };
    let build = |axis: usize| {
        let (cu, cv) = (clamp_u.clone(), clamp_v.clone());
        ScalarField::analytic(surface, move |x| {
            let pp = axes[0].apply(x.p);
            let qq = axes[1].apply(x.q);
            let (vp, dvp) = cv(pp);
            let (vq, dvq) = cv(qq);
            let (uu, du) = cu(if axis == 0 { pp } else { qq });
            let value = vp * vq * uu;
            let (fp, fq) = if axis == 0 {
                (dvp * vq * uu + vp * vq * du, vp * dvq * uu)
            } else {
                (dvp * vq * uu, vp * dvq * uu + vp * vq * du)
            };
            Jet::new(value, scale * fp, scale * fq)
        })
    };
    let f = build(0);
    let g = build(1);
    Ok(QuadPair {
        f,
        g,
        alpha,
        beta,
        epsilon: eps,
        delta,
        gamma,
        guarantee: gamma * gamma,
        target: (1.0 / a).max(1.0 / (b - a)),
        gap_regime: 4.0 * a > b && 4.0 * a < 3.0 * b,
        origin: Point::new(axes[0].origin, axes[1].origin),
        side: alpha / scale,
    })
}

/// Profiles `φ`, `ψ` of the sphere construction, raw and smoothed.
#[derive(Clone, Debug, Serialize)]
pub struct SphereProfile {
    pub epsilon: f64,
    pub window: f64,
    phi: SlopeProfile,
    /// `ψ_c(v) − ψ_s(v)` for `v ≥ 1/2 + w`.
    deficit: f64,
}

impl SphereProfile {
    pub fn new(epsilon: f64, window: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.125) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1/8), got {epsilon}"
            )));
        }
        if !(window > 0.0 && window < 0.25) {
            return Err(Error::InvalidArgument(format!("bad smoothing window {window}")));
        }
        let phi = SlopeProfile::new(
            0.25 - epsilon + 4.0 * epsilon * (0.5 - window),
            vec![0.5 - window, 0.5],
            vec![4.0 * epsilon, 0.0],
        )?;
        let mut p = SphereProfile {
            epsilon,
            window,
            phi,
            deficit: 0.0,
        };
        let d = gauss_legendre(0.5, 0.5 + window, 16)
            .into_iter()
            .map(|(x, wt)| wt * (1.0 - smoother((x - 0.5) / window)) * p.psi_raw_deriv(x))
            .sum();
        p.deficit = d;
        Ok(p)
    }

    /// Piecewise `φ` before smoothing.
    pub fn phi_raw(&self, v: f64) -> f64 {
        let e = self.epsilon;
        if v <= 0.5 {
            0.25 - e + 4.0 * e * v
        } else {
            0.25 + e
        }
    }

    /// Piecewise `ψ` before smoothing.
    pub fn psi_raw(&self, v: f64) -> f64 {
        let e = self.epsilon;
        if v <= 0.5 {
            4.0 * e
        } else {
            (1.0 - 4.0 * e) + (-0.5 + 4.0 * e) / v
        }
    }

    fn psi_raw_deriv(&self, v: f64) -> f64 {
        if v <= 0.5 {
            0.0
        } else {
            (0.5 - 4.0 * self.epsilon) / (v * v)
        }
    }

    /// Smoothed `φ` and `φ'`.
    pub fn phi(&self, v: f64) -> (f64, f64) {
        self.phi.eval(v)
    }

    /// Smoothed `ψ` and `ψ'`.
    pub fn psi(&self, v: f64) -> (f64, f64) {
        let w = self.window;
        if v <= 0.5 {
            (4.0 * self.epsilon, 0.0)
        } else if v >= 0.5 + w {
            (self.psi_raw(v) - self.deficit, self.psi_raw_deriv(v))
        } else {
            let integral: f64 = gauss_legendre(0.5, v, 12)
                .into_iter()
                .map(|(x, wt)| wt * smoother((x - 0.5) / w) * self.psi_raw_deriv(x))
                .sum();
            (
                4.0 * self.epsilon + integral,
                smoother((v - 0.5) / w) * self.psi_raw_deriv(v),
            )
        }
    }
}

/// The sphere pair `(F₁, G₁)` close to `(x², y²)` with small bracket.
#[derive(Clone, Debug)]
pub struct SpherePair {
    pub f: ScalarField,
    pub g: ScalarField,
    pub profile: SphereProfile,
    /// `‖{F₁,G₁}‖ ≤ 64ε²`.
    pub bracket_bound: f64,
    /// `‖F − F₁‖ + ‖G − G₁‖ ≤ 1/2 − ε`.
    pub distance_bound: f64,
}

impl SpherePair {
    /// Re-measure both guarantees on an `n²` grid.
    pub fn verify(&self, n: usize) -> Result<Vec<Guarantee>> {
        let s = self.f.surface();
        let opts = SupOptions { n, refine_levels: 12 };
        let b = crate::fields::poisson_bracket(&self.f, &self.g)?;
        let rb = sup_norm_with(&b, opts);
        let x2 = ScalarField::from_expr(s, "x^2")?;
        let y2 = ScalarField::from_expr(s, "y^2")?;
        let df = sup_norm_with(&self.f.sub(&x2)?, opts).sup_norm;
        let dg = sup_norm_with(&self.g.sub(&y2)?, opts).sup_norm;
        Ok(vec![
            Guarantee::new("sup |{F1,G1}|", self.bracket_bound, rb.sup_norm, 1e-9),
            Guarantee::new("|F-F1| + |G-G1|", self.distance_bound, df + dg, 1e-3),
        ])
    }
}

pub fn sphere_profile_pair(epsilon: f64) -> Result<SpherePair> {
    sphere_profile_pair_with(epsilon, 0.25 * epsilon)
}

/// Sphere pair with an explicit smoothing window.
pub fn sphere_profile_pair_with(epsilon: f64, window: f64) -> Result<SpherePair> {
    let profile = SphereProfile::new(epsilon, window)?;
    let surface = Surface::round_sphere();
    // u = t − s, v = t + s with t = x², s = y²; chart (z, angle).
    let build = |sign: f64| {
        let pr = profile.clone();
        ScalarField::analytic(&surface, move |x| {
            let z = x.p;
            let r2 = 1.0 - z * z;
            let (s2, c2) = (2.0 * x.q).sin_cos();
            let u = r2 * c2;
            let u_z = -2.0 * z * c2;
            let u_a = -2.0 * r2 * s2;
            let v_z = -2.0 * z;
            let (ph, dph) = pr.phi(r2);
            let (ps, dps) = pr.psi(r2);
            Jet::new(
                ph + sign * u * ps,
                dph * v_z + sign * (u_z * ps + u * dps * v_z),
                sign * u_a * ps,
            )
        })
    };
    Ok(SpherePair {
        f: build(1.0),
        g: build(-1.0),
        profile,
        bracket_bound: 64.0 * epsilon * epsilon,
        distance_bound: 0.5 - epsilon,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct FlowAverageOptions {
    /// Grid cells per axis of the output field.
    pub n: usize,
    /// Integrator step.
    pub step: f64,
}

impl Default for FlowAverageOptions {
    fn default() -> Self {
        FlowAverageOptions { n: 128, step: 5e-3 }
    }
}

fn trapezoid_average(h: &ScalarField, tr: &Trajectory, b: f64) -> f64 {
    let vals: Vec<f64> = tr.points.iter().map(|&x| h.value(x)).collect();
    let mut acc = 0.0;
    for k in 1..vals.len() {
        acc += 0.5 * (vals[k - 1] + vals[k]) * (tr.times[k] - tr.times[k - 1]);
    }
    acc / b
}

/// `F = (1/b)∫₀ᵇ H∘g_t dt` on a grid, `g_t` the flow of `G`.
pub fn flow_average_function(h: &ScalarField, g: &ScalarField, b: f64) -> Result<ScalarField> {
    flow_average_function_with(h, g, b, FlowAverageOptions::default())
}

pub fn flow_average_function_with(
    h: &ScalarField,
    g: &ScalarField,
    b: f64,
    opts: FlowAverageOptions,
) -> Result<ScalarField> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("b must be positive, got {b}")));
    }
    if h.surface() != g.surface() {
        return Err(Error::SurfaceMismatch);
    }
    let surface = g.surface();
    let grid = Grid::for_surface(surface, opts.n);
    let values: Result<Vec<f64>> = (0..grid.node_count())
        .into_par_iter()
        .map(|k| {
            let x = grid.node_at(k);
            let tr = hamiltonian_flow(g, x, [0.0, b], opts.step)?;
            Ok(trapezoid_average(h, &tr, b))
        })
        .collect();
    Ok(ScalarField::from_grid(surface, GridField::new(grid, values?, Interp::Cubic)))
}

fn range_violation(f: &ScalarField, lo: f64, hi: f64) -> (f64, Point) {
    let grid = Grid::for_surface(f.surface(), 128);
    (0..grid.node_count())
        .into_par_iter()
        .map(|k| {
            let x = grid.node_at(k);
            let v = f.value(x);
            ((lo - v).max(v - hi).max(0.0), x)
        })
        .reduce(|| (0.0, Point::new(0.0, 0.0)), |a, b| if b.0 > a.0 { b } else { a })
}

const RANGE_TOL: f64 = 1e-9;

fn require_unit_range(f: &ScalarField, name: &str) -> Result<()> {
    let (v, x) = range_violation(f, 0.0, 1.0);
    if v > RANGE_TOL {
        return Err(Error::InvalidArgument(format!(
            "{name} leaves [0,1] by {v} at ({}, {})",
            x.p, x.q
        )));
    }
    Ok(())
}

/// `(F·G, (1−F)·G)`: a pb3 pair whose bracket is `G·{F,G}`.
pub fn pb3_from_pb4_pair(f: &ScalarField, g: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    require_unit_range(f, "F")?;
    require_unit_range(g, "G")?;
    let fg = f.mul(g)?;
    let rest = g.sub(&fg)?;
    Ok((fg, rest))
}

/// `F' = u·F`; checks that `G` is locally constant wherever `u` varies.
pub fn expansion_cutoff(f: &ScalarField, u: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    let s = f.surface();
    if u.surface() != s || g.surface() != s {
        return Err(Error::SurfaceMismatch);
    }
    let grid = Grid::for_surface(s, 128);
    let worst = (0..grid.node_count())
        .into_par_iter()
        .map(|k| {
            let x = grid.node_at(k);
            let ju = u.jet(x);
            if ju.dp.hypot(ju.dq) <= 1e-9 {
                return 0.0;
            }
            let jg = g.jet(x);
            jg.dp.hypot(jg.dq)
        })
        .reduce(|| 0.0, f64::max);
    if worst > 1e-7 {
        return Err(Error::InvalidArgument(format!(
            "G is not locally constant where the cutoff varies (|dG| = {worst})"
        )));
    }
    f.mul(u)
}

/// `(tF + (1−t)/2, G)`: bracket scaled by `t`, distance at most `(1−t)/2`.
pub fn half_constant_interpolation(
    f: &ScalarField,
    g: &ScalarField,
    t: f64,
) -> Result<(ScalarField, ScalarField)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0,1], got {t}")));
    }
    if f.surface() != g.surface() {
        return Err(Error::SurfaceMismatch);
    }
    require_unit_range(f, "F")?;
    Ok((f.affine(t, 0.5 * (1.0 - t)), g.clone()))
}

/// Sup of `|F − F'|` on an `n²` grid.
pub fn sup_distance(a: &ScalarField, b: &ScalarField, n: usize) -> Result<f64> {
    Ok(sup_norm_with(&a.sub(b)?, SupOptions { n, refine_levels: 8 }).sup_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::poisson_bracket;

    #[test]
    fn profile_matches_integral_of_slope() {
        let p = SlopeProfile::new(0.0, vec![0.0, 0.1, 0.5, 0.7], vec![0.0, 2.0, 2.0, -1.0]).unwrap();
        let grid: Vec<f64> = (0..=7000).map(|i| i as f64 * 1e-4).collect();
        let mut acc = 0.0;
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            acc += 0.5 * (b - a) * (p.eval(a).1 + p.eval(b).1);
            assert!((acc - p.value(b)).abs() < 1e-6);
        }
        assert!((p.value(0.8) - p.end_value() + 0.1).abs() < 1e-12);
    }

    #[test]
    fn smooth_step_margins_and_symmetry() {
        let u = smooth_step(0.1).unwrap();
        assert_eq!(u.value(0.0), 0.0);
        assert_eq!(u.value(1.0), 1.0);
        assert!((u.value(0.5) - 0.5).abs() < 1e-15);
        for i in 0..=200 {
            let s = i as f64 / 200.0;
            assert!((u.value(s) + u.value(1.0 - s) - 1.0).abs() < 1e-14);
            assert!(u.deriv(s) >= 0.0);
        }
        assert!((u.measured_max_slope(100_000) - u.bound).abs() < 1e-6);
        assert!(smooth_step(0.3).is_err());
        assert!(smooth_step(0.0).is_err());
    }

    #[test]
    fn cutoff_map_pins_margins() {
        let m = triangle_cutoff_map(0.2).unwrap();
        assert!((m.delta - (1.0 - 1.2f64.powf(-0.125))).abs() < 1e-15);
        for &(s, t) in &[(-3.0, 0.4), (0.5 * m.delta, 0.2), (m.delta, 5.0), (-1.0, -1.0)] {
            assert_eq!(m.eval([s, t])[0], 0.0, "({s},{t})");
        }
        for &(s, t) in &[(0.3, m.delta), (9.0, -2.0)] {
            assert_eq!(m.eval([s, t])[1], 0.0);
        }
        let y = m.eval([0.8, 0.8]);
        assert!((y[0] + y[1] - 1.0).abs() < 1e-12);
        assert!(triangle_cutoff_map(1e-3).unwrap().delta < 2e-4);
        assert!(triangle_cutoff_map(0.0).is_err());
    }

    #[test]
    fn cutoff_map_jacobian_matches_differences() {
        let m = triangle_cutoff_map(0.5).unwrap();
        let h = 1e-7;
        for &(s, t) in &[(0.3, 0.3), (0.02, 0.5), (0.6, 0.38), (-0.2, 0.9), (0.1, 0.05)] {
            let (_, j) = m.eval_with_jacobian([s, t]);
            let a = m.eval([s + h, t]);
            let b = m.eval([s - h, t]);
            let c = m.eval([s, t + h]);
            let d = m.eval([s, t - h]);
            for r in 0..2 {
                assert!((j[r][0] - (a[r] - b[r]) / (2.0 * h)).abs() < 1e-5);
                assert!((j[r][1] - (c[r] - d[r]) / (2.0 * h)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn large_kappa_is_clamped() {
        let m = triangle_cutoff_map(100.0).unwrap();
        assert!(m.kappa_effective < 100.0);
        assert!(m.det_bound() <= 1.0 + m.kappa_effective + 1e-12);
    }

    #[test]
    fn quad_pair_example() {
        let s = Surface::unit_torus();
        let q = quadrilateral_pair(0.2, 1.0, 0.99, 0.01, &s).unwrap();
        assert!((q.gamma - 2.246).abs() < 1e-3);
        assert!(!q.gap_regime);
        let g = q.verify(256).unwrap();
        enforce(&g).unwrap();
        assert!(g[0].measured > 5.0 && g[0].measured <= 5.05);
        // Values on the sides.
        let a = q.side;
        for i in 0..=10 {
            let y = a * i as f64 / 10.0;
            assert!(q.f.value(Point::new(0.0, y)).abs() < 1e-12);
            assert!((q.f.value(Point::new(a, y)) - 1.0).abs() < 1e-12);
            assert!(q.g.value(Point::new(y, 0.0)).abs() < 1e-12);
            assert!((q.g.value(Point::new(y, a)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quad_pair_bracket_is_product_of_slopes() {
        let s = Surface::unit_torus();
        let q = quadrilateral_pair(0.3, 1.0, 0.99, 0.01, &s).unwrap();
        assert!(q.gap_regime);
        let b = poisson_bracket(&q.f, &q.g).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                let x = Point::new(i as f64 / 40.0 + 0.003, j as f64 / 40.0 + 0.007);
                let jf = q.f.jet(x);
                let jg = q.g.jet(x);
                let inside = x.p <= q.beta && x.q <= q.beta;
                if !inside {
                    assert!(b.value(x).abs() < 1e-12, "({}, {})", x.p, x.q);
                } else {
                    assert!((b.value(x) + jf.dp * jg.dq).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quad_pair_rejects_bad_beta() {
        let s = Surface::unit_torus();
        assert!(quadrilateral_pair(0.2, 1.0, 0.4, 0.01, &s).is_err());
        assert!(quadrilateral_pair(0.2, 1.0, 1.0, 0.01, &s).is_err());
        assert!(quadrilateral_pair(0.2, 2.0, 0.9, 0.01, &s).is_err());
        let small = Surface::plane([0.0, 0.5], [0.0, 0.5], 0.01).unwrap();
        assert!(quadrilateral_pair(0.2, 1.0, 0.9, 0.01, &small).is_err());
    }

    #[test]
    fn sphere_raw_profile_values() {
        let p = SphereProfile::new(0.05, 0.0125).unwrap();
        assert!((p.phi_raw(0.0) + 0.0 * p.psi_raw(0.0) - 0.2).abs() < 1e-15);
        assert!((p.psi_raw(0.5) - 0.2).abs() < 1e-15);
        assert!((p.psi_raw(1.0) - 0.5).abs() < 1e-15);
        // Smoothed profiles are C¹ across the window ends.
        let w = p.window;
        for v in [0.5, 0.5 + w, 0.5 - w] {
            let (a, da) = p.psi(v - 1e-9);
            let (b, db) = p.psi(v + 1e-9);
            assert!((a - b).abs() < 1e-8 && (da - db).abs() < 1e-6);
            let (a, da) = p.phi(v - 1e-9);
            let (b, db) = p.phi(v + 1e-9);
            assert!((a - b).abs() < 1e-8 && (da - db).abs() < 1e-6);
        }
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            let (ps, _) = p.psi(v);
            let (_, dph) = p.phi(v);
            if v <= 0.5 {
                assert!(ps <= 0.2 + 1e-15 && dph.abs() <= 0.2 + 1e-15);
            } else {
                assert!(ps.abs() <= 0.5 && dph.abs() <= 32.0 * 0.05 * 0.05);
            }
        }
    }

    #[test]
    fn sphere_pair_guarantees() {
        let p = sphere_profile_pair(0.05).unwrap();
        let g = p.verify(128).unwrap();
        enforce(&g).unwrap();
        assert!(g[0].measured <= 0.16);
    }

    #[test]
    fn sphere_pair_partials_match_differences() {
        let p = sphere_profile_pair(0.1).unwrap();
        let h = 1e-6;
        for &(z, a) in &[(0.3, 0.4), (-0.75, 2.0), (0.69, 5.1), (0.1, 1.0)] {
            let x = Point::new(z, a);
            let j = p.f.jet(x);
            let dz = (p.f.value(x.offset(h, 0.0)) - p.f.value(x.offset(-h, 0.0))) / (2.0 * h);
            let da = (p.f.value(x.offset(0.0, h)) - p.f.value(x.offset(0.0, -h))) / (2.0 * h);
            assert!((j.dp - dz).abs() < 1e-6 && (j.dq - da).abs() < 1e-6);
        }
    }

    #[test]
    fn flow_average_of_invariant_is_identity() {
        let s = Surface::unit_torus();
        let g = ScalarField::from_expr(&s, "sin(2*pi*p)/(2*pi)").unwrap();
        let h = g.map(|v| (v * v, 2.0 * v));
        let f = flow_average_function_with(&h, &g, 1.0, FlowAverageOptions { n: 32, step: 1e-2 }).unwrap();
        for k in 0..20 {
            let x = Point::new(0.05 * k as f64, 0.37);
            assert!((f.value(x) - h.value(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn pb3_from_pb4_identity() {
        let s = Surface::unit_torus();
        let q = quadrilateral_pair(0.2, 1.0, 0.99, 0.01, &s).unwrap();
        let (a, b) = pb3_from_pb4_pair(&q.f, &q.g).unwrap();
        let x = Point::new(0.2, 0.3);
        assert!((a.value(x) + b.value(x) - q.g.value(x)).abs() < 1e-15);
        let lhs = poisson_bracket(&a, &b).unwrap().value(x);
        let rhs = q.g.value(x) * poisson_bracket(&q.f, &q.g).unwrap().value(x);
        assert!((lhs - rhs).abs() < 1e-10);
        let big = ScalarField::constant(&s, 2.0);
        assert!(pb3_from_pb4_pair(&big, &q.g).is_err());
    }

    #[test]
    fn half_constant_endpoints() {
        let s = Surface::unit_torus();
        let f = ScalarField::from_expr(&s, "0.5+0.5*sin(2*pi*p)").unwrap();
        let g = ScalarField::from_expr(&s, "cos(2*pi*q)").unwrap();
        let (f1, _) = half_constant_interpolation(&f, &g, 1.0).unwrap();
        assert_eq!(sup_distance(&f, &f1, 32).unwrap(), 0.0);
        let (f0, _) = half_constant_interpolation(&f, &g, 0.0).unwrap();
        assert!(sup_distance(&f, &f0, 32).unwrap() <= 0.5 + 1e-12);
        assert!(half_constant_interpolation(&f, &g, 1.5).is_err());
    }

    #[test]
    fn expansion_cutoff_checks_geometry() {
        let s = Surface::unit_torus();
        let f = ScalarField::from_expr(&s, "sin(2*pi*p)").unwrap();
        let g = ScalarField::from_expr(&s, "cos(2*pi*q)").unwrap();
        let one = ScalarField::constant(&s, 1.0);
        let same = expansion_cutoff(&f, &one, &g).unwrap();
        assert_eq!(same.value(Point::new(0.1, 0.2)), f.value(Point::new(0.1, 0.2)));
        let u = ScalarField::from_expr(&s, "cos(2*pi*q)").unwrap();
        assert!(expansion_cutoff(&f, &u, &g).is_err());
    }
}
