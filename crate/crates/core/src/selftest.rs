//! Quick invariant suite behind `pbinv selftest`.

use rand::Rng;
use serde::Serialize;

use crate::certificates::stokes_lower_bound;
use crate::constructions::{pb3_from_pb4_pair, quadrilateral_pair, smooth_step, triangle_cutoff_map};
use crate::dynamics::{energy_drift, hamiltonian_flow, hamiltonian_flow_controlled};
use crate::error::Result;
use crate::fields::{area_integral, line_integral_fdg, poisson_bracket, sup_norm_with, ScalarField, SupOptions};
use crate::geometry::{Point, Region, Surface};
use crate::optimizer::{estimate_pb, OptimizerConfig};
use crate::rng::stream_rng;
use crate::scenes::discs_zero_scene;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured discrepancy or value.
    pub measured: f64,
    /// Threshold the measurement is compared against.
    pub threshold: f64,
    pub detail: Option<String>,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail: None,
        }
    }

    fn failed(name: &str, e: crate::Error) -> Self {
        Check {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            threshold: f64::NAN,
            detail: Some(e.to_string()),
        }
    }
}

fn run(name: &str, f: impl FnOnce() -> Result<(f64, f64)>) -> Check {
    match f() {
        Ok((m, t)) => Check::at_most(name, m, t),
        Err(e) => Check::failed(name, e),
    }
}

fn fields(s: &Surface) -> Result<[ScalarField; 3]> {
    Ok([
        ScalarField::from_expr(s, "sin(2*pi*p)*cos(2*pi*q)")?,
        ScalarField::from_expr(s, "cos(2*pi*p) + 0.5*sin(4*pi*q)")?,
        ScalarField::from_expr(s, "sin(2*pi*(p+q))")?,
    ])
}

fn random_points(seed: u64, n: usize) -> Vec<Point> {
    let mut rng = stream_rng(seed, 7);
    (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect()
}

fn max_abs(pts: &[Point], f: impl Fn(Point) -> f64) -> f64 {
    pts.iter().map(|&x| f(x).abs()).fold(0.0, f64::max)
}

/// Run every check; failures are reported, not raised.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let torus = Surface::unit_torus();
    let pts = random_points(seed, 200);
    let mut out = Vec::new();

    out.push(run("antisymmetry", || {
        let [f, g, _] = fields(&torus)?;
        let (a, b) = (poisson_bracket(&f, &g)?, poisson_bracket(&g, &f)?);
        Ok((max_abs(&pts, |x| a.value(x) + b.value(x)), 1e-10))
    }));
    out.push(run("leibniz rule", || {
        let [f, g, h] = fields(&torus)?;
        let lhs = poisson_bracket(&f.mul(&h)?, &g)?;
        let (fg, hg) = (poisson_bracket(&f, &g)?, poisson_bracket(&h, &g)?);
        Ok((
            max_abs(&pts, |x| lhs.value(x) - f.value(x) * hg.value(x) - h.value(x) * fg.value(x)),
            1e-9,
        ))
    }));
    out.push(run("jacobi identity", || {
        let [f, g, h] = fields(&torus)?;
        let a = poisson_bracket(&f, &poisson_bracket(&g, &h)?)?;
        let b = poisson_bracket(&g, &poisson_bracket(&h, &f)?)?;
        let c = poisson_bracket(&h, &poisson_bracket(&f, &g)?)?;
        let scale = max_abs(&pts, |x| a.value(x)).max(1.0);
        Ok((max_abs(&pts, |x| a.value(x) + b.value(x) + c.value(x)) / scale, 1e-5))
    }));
    out.push(run("{p,q} = -1", || {
        let plane = Surface::plane([0.0, 1.0], [0.0, 1.0], 0.1)?;
        let p = ScalarField::from_expr(&plane, "p")?;
        let q = ScalarField::from_expr(&plane, "q")?;
        let b = poisson_bracket(&p, &q)?;
        Ok((max_abs(&pts, |x| b.value(x) + 1.0), 1e-12))
    }));
    out.push(run("stokes identity", || {
        let [f, g, _] = fields(&torus)?;
        let region = Region::rectangle([0.1, 0.6], [0.2, 0.7]);
        let area = area_integral(&poisson_bracket(&f, &g)?, &region)?;
        let mut line = 0.0;
        for lp in region.boundary_loops(&torus, 4096)? {
            line += line_integral_fdg(&f, &g, &lp, true)?.value;
        }
        Ok(((area.value + line).abs(), 1e-5))
    }));
    out.push(run("certificate below sup norm", || {
        let [f, g, _] = fields(&torus)?;
        let cert = stokes_lower_bound(&f, &g, &Region::disc(Point::new(0.5, 0.5), 0.2))?;
        let sup = sup_norm_with(&poisson_bracket(&f, &g)?, SupOptions { n: 128, refine_levels: 8 });
        Ok((cert.value - sup.upper(), 0.0))
    }));
    out.push(run("cutoff map jacobian", || {
        let kappa = 0.5;
        let map = triangle_cutoff_map(kappa)?;
        let mut rng = stream_rng(seed, 11);
        let mut worst = 0.0f64;
        for _ in 0..2000 {
            let (s, t): (f64, f64) = (rng.gen(), rng.gen());
            let x = if s + t <= 1.0 { [s, t] } else { [1.0 - s, 1.0 - t] };
            worst = worst.max(map.jacobian_det(x).abs());
        }
        Ok((worst, 1.0 + kappa + 1e-12))
    }));
    out.push(run("smooth step slope at most 1+2δ", || {
        let delta = 0.1;
        let u = smooth_step(delta)?;
        Ok((u.measured_max_slope(100_000), 1.0 + 2.0 * delta))
    }));
    out.push(run("pb3 from pb4 bracket", || {
        let f = ScalarField::from_expr(&torus, "0.5 + 0.5*sin(2*pi*p)")?;
        let g = ScalarField::from_expr(&torus, "0.5 + 0.5*cos(2*pi*q)")?;
        let (f3, g3) = pb3_from_pb4_pair(&f, &g)?;
        let (b3, b4) = (poisson_bracket(&f3, &g3)?, poisson_bracket(&f, &g)?);
        Ok((max_abs(&pts, |x| b3.value(x) - g.value(x) * b4.value(x)), 1e-10))
    }));
    out.push(run("flow reversal", || {
        let [_, g, _] = fields(&torus)?;
        let x0 = Point::new(0.3, 0.4);
        let fwd = hamiltonian_flow(&g, x0, [0.0, 1.0], 1e-3)?;
        let back = hamiltonian_flow(&g, fwd.end(), [1.0, 0.0], 1e-3)?;
        Ok((torus.distance(back.end(), x0), 1e-8))
    }));
    out.push(run("energy drift of the quadrilateral hamiltonian", || {
        let q = quadrilateral_pair(0.25, 1.0, 0.99, 0.01, &torus)?;
        let tr = hamiltonian_flow_controlled(&q.g, Point::new(0.1, 0.45), [0.0, 1.0], 1e-3, 1e-9)?;
        Ok((energy_drift(&tr, &q.g), 1e-8))
    }));
    out.push(run("zero scene optimizer", || {
        let config = OptimizerConfig {
            grid: 32,
            restarts: 2,
            iters: 300,
            levels: 2,
            seed,
            ..OptimizerConfig::default()
        };
        let e = estimate_pb(&discs_zero_scene(), &config)?;
        Ok((e.upper_bound, 1e-3))
    }));
    out
}
