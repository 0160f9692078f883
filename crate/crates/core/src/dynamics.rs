//! Hamiltonian flows on surfaces and chords between sets.
//!
//! With `{F,G} = (F_q G_p − F_p G_q)/ρ` the flow of `G` is
//! `ṗ = −G_q/ρ`, `q̇ = G_p/ρ`. Integration runs in unwrapped chart
//! coordinates; stored points are normalized.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{Point, PointSet, Surface, SurfaceKind};

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    ImplicitMidpoint,
    Rk4,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub energy: Vec<f64>,
    pub step: f64,
    pub integrator: Integrator,
}

impl Trajectory {
    pub fn end(&self) -> Point {
        *self.points.last().expect("trajectory has a start point")
    }
}

/// Hamiltonian vector field of `g` at `x`.
pub fn velocity(g: &ScalarField, x: Point) -> [f64; 2] {
    let j = g.jet(x);
    let rho = g.surface().density();
    [-j.dq / rho, j.dp / rho]
}

fn check_chart(surface: &Surface, x: Point) -> Result<()> {
    if !(x.p.is_finite() && x.q.is_finite()) {
        return Err(Error::Integration("non-finite state".into()));
    }
    match surface.kind() {
        SurfaceKind::PlaneSquare if !surface.in_chart(x) => Err(Error::Integration(format!(
            "trajectory left the chart at ({}, {})",
            x.p, x.q
        ))),
        SurfaceKind::RoundSphere if x.p.abs() > 1.0 => Err(Error::Integration(format!(
            "trajectory crossed a pole at z = {}",
            x.p
        ))),
        _ => Ok(()),
    }
}

/// One step of size `h` (negative integrates backward).
pub fn step_once(g: &ScalarField, x: Point, h: f64, integrator: Integrator) -> Result<Point> {
    step_split(g, x, h, integrator, None, 0)
}

/// Implicit midpoint step that splits until `|ΔG| ≤ energy_tol·|h|` on every substep.
pub fn step_controlled(g: &ScalarField, x: Point, h: f64, energy_tol: f64) -> Result<Point> {
    step_split(g, x, h, Integrator::ImplicitMidpoint, Some(energy_tol), 0)
}

/// Steps whose fixed point fails (a velocity kink inside the step), or whose
/// energy error exceeds the requested tolerance, retry as two half steps.
const MAX_SPLIT_DEPTH: u32 = 24;

fn step_split(
    g: &ScalarField,
    x: Point,
    h: f64,
    integrator: Integrator,
    energy_tol: Option<f64>,
    depth: u32,
) -> Result<Point> {
    let can_split = depth < MAX_SPLIT_DEPTH && integrator == Integrator::ImplicitMidpoint;
    let split = || -> Result<Point> {
        let mid = step_split(g, x, 0.5 * h, integrator, energy_tol, depth + 1)?;
        step_split(g, mid, 0.5 * h, integrator, energy_tol, depth + 1)
    };
    match step_raw(g, x, h, integrator) {
        Ok(y) if can_split && energy_tol.is_some_and(|t| (g.value(y) - g.value(x)).abs() > t * h.abs()) => split(),
        Err(Error::Integration(_)) if can_split => split(),
        r => r,
    }
}

fn step_raw(g: &ScalarField, x: Point, h: f64, integrator: Integrator) -> Result<Point> {
    let y = match integrator {
        Integrator::ImplicitMidpoint => {
            let v0 = velocity(g, x);
            let mut y = x.offset(h * v0[0], h * v0[1]);
            let mut converged = false;
            for _ in 0..FIXED_POINT_MAX_ITER {
                let m = Point::new(0.5 * (x.p + y.p), 0.5 * (x.q + y.q));
                let v = velocity(g, m);
                let next = x.offset(h * v[0], h * v[1]);
                let change = (next.p - y.p).abs().max((next.q - y.q).abs());
                y = next;
                let scale = 1.0f64.max(y.p.abs()).max(y.q.abs());
                if change <= FIXED_POINT_TOL * scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Integration(format!(
                    "fixed-point iteration did not converge at ({}, {})",
                    x.p, x.q
                )));
            }
            y
        }
        Integrator::Rk4 => {
            let k1 = velocity(g, x);
            let k2 = velocity(g, x.offset(0.5 * h * k1[0], 0.5 * h * k1[1]));
            let k3 = velocity(g, x.offset(0.5 * h * k2[0], 0.5 * h * k2[1]));
            let k4 = velocity(g, x.offset(h * k3[0], h * k3[1]));
            x.offset(
                h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            )
        }
    };
    check_chart(g.surface(), y)?;
    Ok(y)
}

/// Integrate from `t_span[0]` to `t_span[1]` with implicit midpoint.
pub fn hamiltonian_flow(g: &ScalarField, x0: Point, t_span: [f64; 2], step: f64) -> Result<Trajectory> {
    hamiltonian_flow_with(g, x0, t_span, step, Integrator::ImplicitMidpoint)
}

pub fn hamiltonian_flow_with(
    g: &ScalarField,
    x0: Point,
    t_span: [f64; 2],
    step: f64,
    integrator: Integrator,
) -> Result<Trajectory> {
    flow_impl(g, x0, t_span, step, integrator, None)
}

/// Implicit midpoint with energy-controlled step splitting: every recorded
/// step changes `G` by at most `energy_tol` per unit time (until the split
/// depth runs out). Meant for Hamiltonians with velocity kinks.
pub fn hamiltonian_flow_controlled(
    g: &ScalarField,
    x0: Point,
    t_span: [f64; 2],
    step: f64,
    energy_tol: f64,
) -> Result<Trajectory> {
    if !(energy_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("energy tolerance must be positive, got {energy_tol}")));
    }
    flow_impl(g, x0, t_span, step, Integrator::ImplicitMidpoint, Some(energy_tol))
}

fn flow_impl(
    g: &ScalarField,
    x0: Point,
    t_span: [f64; 2],
    step: f64,
    integrator: Integrator,
    energy_tol: Option<f64>,
) -> Result<Trajectory> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let surface = g.surface();
    check_chart(surface, x0)?;
    let span = t_span[1] - t_span[0];
    let n = (span.abs() / step).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    let mut energy = Vec::with_capacity(n + 1);
    let mut x = x0;
    times.push(t_span[0]);
    points.push(surface.normalize(x));
    energy.push(g.value(x));
    for k in 1..=n {
        x = step_split(g, x, h, integrator, energy_tol, 0)?;
        times.push(t_span[0] + k as f64 * h);
        points.push(surface.normalize(x));
        energy.push(g.value(x));
    }
    Ok(Trajectory {
        times,
        points,
        energy,
        step: h.abs(),
        integrator,
    })
}

/// Largest deviation of `g` from its initial value along the trajectory.
pub fn energy_drift(traj: &Trajectory, g: &ScalarField) -> f64 {
    let Some(&x0) = traj.points.first() else {
        return 0.0;
    };
    let e0 = g.value(x0);
    traj.points
        .iter()
        .map(|&x| (g.value(x) - e0).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Chord {
    pub start: Point,
    /// Signed end time.
    pub time: f64,
    pub end: Point,
    pub length: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ChordOptions {
    pub horizon: f64,
    pub seeds: usize,
    /// Hit tolerance; `None` uses 10⁻³ of the chart diameter.
    pub tol: Option<f64>,
    pub step: f64,
}

impl Default for ChordOptions {
    fn default() -> Self {
        ChordOptions {
            horizon: 1.0,
            seeds: 64,
            tol: None,
            step: 1e-3,
        }
    }
}

impl ChordOptions {
    pub fn tol(&self, surface: &Surface) -> f64 {
        self.tol.unwrap_or(1e-3 * surface.diameter())
    }
}

const BISECT_TIME_TOL: f64 = 1e-6;

/// First time in direction `dir` at which the flow from `x0` comes within
/// `tol` of `target`, with the hit time refined by bisection.
fn first_hit(
    g: &ScalarField,
    x0: Point,
    target: &PointSet,
    dir: f64,
    horizon: f64,
    step: f64,
    tol: f64,
) -> Result<Option<(f64, Point)>> {
    let surface = g.surface();
    let gap = |x: Point| target.distance(surface, x) - tol;
    let mut t = 0.0;
    let mut x = x0;
    while t < horizon {
        let v = velocity(g, x);
        let speed = v[0].hypot(v[1]);
        if speed == 0.0 {
            return Ok(None);
        }
        let h = step.min(tol / (2.0 * speed)).min(horizon - t);
        let y = step_once(g, x, dir * h, Integrator::ImplicitMidpoint)?;
        if gap(y) <= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            let mut hit = y;
            while hi - lo > BISECT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                let z = step_once(g, x, dir * mid, Integrator::ImplicitMidpoint)?;
                if gap(z) <= 0.0 {
                    hi = mid;
                    hit = z;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some((dir * (t + hi), surface.normalize(hit))));
        }
        x = y;
        t += h;
    }
    Ok(None)
}

fn chords_from_seeds(
    g: &ScalarField,
    seeds: &[Point],
    x1: &PointSet,
    opts: &ChordOptions,
) -> Vec<Chord> {
    let surface = g.surface();
    let tol = opts.tol(surface);
    let mut found: Vec<(usize, Chord)> = seeds
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, &x0)| {
            let mut out = Vec::new();
            for dir in [1.0, -1.0] {
                let Ok(Some((t, _))) = first_hit(g, x0, x1, dir, opts.horizon, opts.step, tol) else {
                    continue;
                };
                // Re-validate with a fresh integration at half step.
                let Ok(traj) = hamiltonian_flow(g, x0, [0.0, t], 0.5 * opts.step.min(tol)) else {
                    continue;
                };
                let end = traj.end();
                if x1.distance(surface, end) <= 2.0 * tol {
                    out.push((
                        i,
                        Chord {
                            start: x0,
                            time: t,
                            end,
                            length: t.abs(),
                        },
                    ));
                }
            }
            out
        })
        .collect();
    found.sort_by(|a, b| a.1.length.total_cmp(&b.1.length).then(a.0.cmp(&b.0)));
    found.into_iter().map(|(_, c)| c).collect()
}

/// Chords from `X₀` to `X₁` in both time directions, sorted by `|T|`.
pub fn find_chords(
    g: &ScalarField,
    x0: &PointSet,
    x1: &PointSet,
    horizon: f64,
    seeds: usize,
    tol: f64,
) -> Vec<Chord> {
    let opts = ChordOptions {
        horizon,
        seeds,
        tol: Some(tol),
        ..ChordOptions::default()
    };
    find_chords_with(g, x0, x1, &opts)
}

pub fn find_chords_with(g: &ScalarField, x0: &PointSet, x1: &PointSet, opts: &ChordOptions) -> Vec<Chord> {
    let seeds = x0.sample_stratified(g.surface(), opts.seeds);
    chords_from_seeds(g, &seeds, x1, opts)
}

/// Minimal chord time-length, refined by re-seeding around the best chord
/// with a halved step.
pub fn min_chord_time(g: &ScalarField, x0: &PointSet, x1: &PointSet, horizon: f64) -> Option<f64> {
    let opts = ChordOptions {
        horizon,
        ..ChordOptions::default()
    };
    min_chord_time_with(g, x0, x1, &opts).map(|c| c.length)
}

pub fn min_chord_time_with(
    g: &ScalarField,
    x0: &PointSet,
    x1: &PointSet,
    opts: &ChordOptions,
) -> Option<Chord> {
    let surface = g.surface();
    let coarse = x0.sample_stratified(surface, opts.seeds);
    let best = chords_from_seeds(g, &coarse, x1, opts).into_iter().next()?;
    let spacing = if coarse.len() > 1 {
        x0.length(surface) / coarse.len() as f64
    } else {
        surface.diameter() / 64.0
    };
    let dense = x0.sample_stratified(surface, 16 * opts.seeds.max(1));
    let local: Vec<Point> = dense
        .into_iter()
        .filter(|&x| surface.distance(x, best.start) <= 2.0 * spacing)
        .collect();
    let fine = ChordOptions {
        step: 0.5 * opts.step,
        horizon: best.length.min(opts.horizon) * 1.05 + opts.step,
        ..*opts
    };
    let refined = chords_from_seeds(g, &local, x1, &fine).into_iter().next();
    match refined {
        Some(c) if c.length < best.length => Some(c),
        _ => Some(best),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Jet;

    #[test]
    fn linear_flow_on_torus() {
        let s = Surface::unit_torus();
        let g = ScalarField::analytic(&s, |x| Jet::new(x.p, 1.0, 0.0));
        let tr = hamiltonian_flow(&g, Point::new(0.2, 0.3), [0.0, 1.0], 1e-2).unwrap();
        let e = tr.end();
        assert!(s.distance(e, Point::new(0.2, 0.3)) < 1e-12);
        assert!(energy_drift(&tr, &g) < 1e-14);
    }

    #[test]
    fn harmonic_oscillator_radius() {
        let s = Surface::plane([-2.0, 2.0], [-2.0, 2.0], 0.1).unwrap();
        let g = ScalarField::analytic(&s, |x| Jet::new(0.5 * (x.p * x.p + x.q * x.q), x.p, x.q));
        let period = 2.0 * std::f64::consts::PI;
        let tr = hamiltonian_flow(&g, Point::new(1.0, 0.0), [0.0, 10.0 * period], 1e-2).unwrap();
        let r = tr.points.iter().map(|x| (x.p.hypot(x.q) - 1.0).abs()).fold(0.0, f64::max);
        assert!(r < 1e-8, "radius drift {r}");
    }

    #[test]
    fn backward_flow_reverses() {
        let s = Surface::unit_torus();
        let g = ScalarField::from_expr(&s, "sin(2*pi*p)*cos(2*pi*q)/(2*pi)").unwrap();
        let x0 = Point::new(0.1, 0.37);
        let a = hamiltonian_flow(&g, x0, [0.0, 1.0], 1e-3).unwrap();
        let b = hamiltonian_flow(&g, a.end(), [0.0, -1.0], 1e-3).unwrap();
        assert!(s.distance(b.end(), x0) < 1e-9);
    }

    #[test]
    fn rk4_agrees_with_midpoint() {
        let s = Surface::unit_torus();
        let g = ScalarField::from_expr(&s, "sin(2*pi*p)*cos(2*pi*q)/(2*pi)").unwrap();
        let x0 = Point::new(0.1, 0.37);
        let a = hamiltonian_flow(&g, x0, [0.0, 0.5], 1e-3).unwrap();
        let b = hamiltonian_flow_with(&g, x0, [0.0, 0.5], 1e-3, Integrator::Rk4).unwrap();
        assert!(s.distance(a.end(), b.end()) < 1e-5);
    }

    #[test]
    fn zero_hamiltonian_has_no_chords() {
        let s = Surface::unit_torus();
        let g = ScalarField::constant(&s, 0.0);
        let a = PointSet::coord_line(0, 0.0);
        let b = PointSet::coord_line(0, 0.5);
        assert!(find_chords(&g, &a, &b, 1.0, 8, 1e-3).is_empty());
        assert!(min_chord_time(&g, &a, &b, 1.0).is_none());
    }

    #[test]
    fn linear_chord_time() {
        let s = Surface::unit_torus();
        // ṗ = −G_q = −1: from p = 0 the line p = 0.75 is reached at t = 0.25.
        let g = ScalarField::analytic(&s, |x| Jet::new(x.q, 0.0, 1.0));
        let a = PointSet::coord_line(0, 0.0);
        let b = PointSet::coord_line(0, 0.75);
        let c = find_chords(&g, &a, &b, 1.0, 4, 1e-4);
        assert!(!c.is_empty());
        assert!((c[0].length - 0.2499).abs() < 1e-3, "{}", c[0].length);
        assert!(c[0].time > 0.0);
    }

    #[test]
    fn plane_exit_is_an_error() {
        let s = Surface::plane([0.0, 1.0], [0.0, 1.0], 0.1).unwrap();
        let g = ScalarField::analytic(&s, |x| Jet::new(x.q, 0.0, 1.0));
        assert!(hamiltonian_flow(&g, Point::new(0.5, 0.5), [0.0, 2.0], 1e-2).is_err());
    }
}
