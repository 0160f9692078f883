//! Upper bounds on pb by projected minimax descent over piecewise-linear
//! pairs, and upper estimates of the profile function.
//!
//! Pairs are node values on a chart grid, interpolated linearly on the
//! diagonal triangulation, so the bracket is constant on each triangle and
//! its sup is computed exactly. Constraints are enforced by projecting
//! every node onto a convex polygon of allowed values after each step, so
//! every iterate is admissible and its measured sup is a valid bound.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::certificates::{
    check_admissible, scene_lower_bound, AdmissibilityReport, Affine, Certificate, ClassKind, Omega,
};
use crate::constructions::{half_constant_interpolation, sphere_profile_pair, sup_distance};
use crate::error::{Error, Result};
use crate::fields::{poisson_bracket, sup_norm_with, ScalarField, SupOptions};
use crate::decimal::Real;
use crate::geometry::{Ambient, PairSpec, Point, PointSet, Scene, Surface, SurfaceKind};
use crate::grid::{Grid, GridField, Interp};
use crate::rng::stream_rng;
use crate::scenes::realize_pair_spec;

/// Value box for classes without a bounded range.
const VALUE_BOX: f64 = 10.0;
/// Sides of the polygon inscribed in a disc `Ω`.
const DISC_SIDES: usize = 64;
const CLIP_TOL: f64 = 1e-12;
const INSIDE_TOL: f64 = 1e-14;
/// Relative slack allowed between a profile candidate's bracket and `s`.
pub const PROFILE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct OptimizerConfig {
    /// Cells per axis of the finest grid.
    pub grid: usize,
    pub restarts: usize,
    /// Iterations per restart, split across levels.
    pub iters: usize,
    /// Multilevel depth; level `l` uses `grid / 2^(levels-1-l)` cells.
    pub levels: usize,
    /// Soft-max sharpness, annealed geometrically from the first to the second.
    pub temperature: [f64; 2],
    /// Largest node step, annealed geometrically.
    pub lr: [f64; 2],
    /// Weight of the bracket excess in the profile free search.
    pub penalty: f64,
    pub seed: u64,
    /// Neighbourhood radius of frozen nodes; defaults to the class radius.
    pub op_radius: Option<f64>,
    /// Iterations of the profile free search (0 disables it).
    pub free_search_iters: usize,
    pub trace_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            grid: 128,
            restarts: 4,
            iters: 10_000,
            levels: 4,
            temperature: [10.0, 1e4],
            lr: [5e-3, 1e-5],
            penalty: 100.0,
            seed: 0,
            op_radius: None,
            free_search_iters: 0,
            trace_every: 50,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.temperature[0] > 0.0 && self.temperature[1] > self.temperature[0]) {
            return bad("temperature schedule must be positive and strictly increasing");
        }
        if !(self.lr[0] > 0.0 && self.lr[1] > 0.0) {
            return bad("step sizes must be positive");
        }
        if self.grid < 4 || self.restarts == 0 || self.iters == 0 || self.levels == 0 || self.trace_every == 0 {
            return bad("grid, restarts, iters, levels and trace interval must be positive");
        }
        if self.grid >> (self.levels - 1) < 4 {
            return bad("too many levels for the grid");
        }
        if !(self.penalty > 0.0) {
            return bad("penalty weight must be positive");
        }
        Ok(())
    }

    fn level_sizes(&self) -> Vec<usize> {
        (0..self.levels).rev().map(|l| self.grid >> l).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub grid: usize,
    pub temperature: f64,
    pub current: f64,
    pub best: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seeded_from: Option<String>,
    pub best: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PbEstimate {
    /// Exact sup of the bracket of the returned piecewise-linear pair.
    pub upper_bound: f64,
    /// Error budget of `upper_bound` (zero: the sup is exact).
    pub upper_error: f64,
    pub certificate: Option<Certificate>,
    /// `upper_bound / certificate` when the certificate is positive.
    pub gap: Option<f64>,
    pub grid: usize,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
    pub trace: Vec<TracePoint>,
    pub admissibility: AdmissibilityReport,
    #[serde(skip)]
    pub f: GridField,
    #[serde(skip)]
    pub g: GridField,
}

impl PbEstimate {
    pub fn pair(&self, surface: &Surface) -> (ScalarField, ScalarField) {
        (
            ScalarField::from_grid(surface, self.f.clone()),
            ScalarField::from_grid(surface, self.g.clone()),
        )
    }
}

/// Convex polygon of allowed node values.
#[derive(Clone, Debug)]
struct Polygon {
    halfplanes: Vec<Affine>,
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    fn new(halfplanes: Vec<Affine>) -> Option<Self> {
        let b = VALUE_BOX;
        let mut v = vec![[-b, -b], [b, -b], [b, b], [-b, b]];
        for h in &halfplanes {
            v = clip(&v, h);
            if v.is_empty() {
                return None;
            }
        }
        Some(Polygon { halfplanes, vertices: v })
    }

    fn contains(&self, x: [f64; 2]) -> bool {
        x[0].abs() <= VALUE_BOX
            && x[1].abs() <= VALUE_BOX
            && self.halfplanes.iter().all(|h| h.eval(x[0], x[1]) >= -INSIDE_TOL)
    }

    fn project(&self, x: [f64; 2]) -> [f64; 2] {
        if self.contains(x) {
            return x;
        }
        let n = self.vertices.len();
        if n == 1 {
            return self.vertices[0];
        }
        let mut best = self.vertices[0];
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let l2 = e[0] * e[0] + e[1] * e[1];
            let t = if l2 > 0.0 {
                (((x[0] - a[0]) * e[0] + (x[1] - a[1]) * e[1]) / l2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let y = [a[0] + t * e[0], a[1] + t * e[1]];
            let d = (y[0] - x[0]).hypot(y[1] - x[1]);
            if d < best_d {
                best_d = d;
                best = y;
            }
        }
        best
    }
}

/// Sutherland–Hodgman clip of a convex polygon by `h ≥ 0`.
fn clip(v: &[[f64; 2]], h: &Affine) -> Vec<[f64; 2]> {
    let n = v.len();
    let val: Vec<f64> = v.iter().map(|x| h.eval(x[0], x[1])).collect();
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(n + 1);
    let mut push = |x: [f64; 2]| {
        if out.last().map_or(true, |y| (y[0] - x[0]).hypot(y[1] - x[1]) > CLIP_TOL) {
            out.push(x);
        }
    };
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = (v[i], v[j]);
        let (fa, fb) = (val[i], val[j]);
        if fa >= -CLIP_TOL {
            push(a);
        }
        if (fa > CLIP_TOL && fb < -CLIP_TOL) || (fa < -CLIP_TOL && fb > CLIP_TOL) {
            let t = fa / (fa - fb);
            push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    while out.len() > 1 {
        let (f, l) = (out[0], out[out.len() - 1]);
        if (f[0] - l[0]).hypot(f[1] - l[1]) <= CLIP_TOL {
            out.pop();
        } else {
            break;
        }
    }
    out
}

/// A curve set as straight chart segments, or `None` for sets with interior.
fn chart_segments(set: &PointSet, surface: &Surface) -> Option<Vec<(Point, Point)>> {
    let bx = surface.sampling_box();
    match set {
        PointSet::Segment { from, to } => Some(vec![(*from, *to)]),
        PointSet::Polyline { points, closed } => {
            let n = points.len();
            if n == 1 {
                return Some(vec![(points[0], points[0])]);
            }
            let m = if *closed { n } else { n.saturating_sub(1) };
            Some((0..m).map(|i| (points[i], points[(i + 1) % n])).collect())
        }
        PointSet::CoordLine { axis, value } => Some(vec![if *axis == 0 {
            (Point::new(*value, bx[1][0]), Point::new(*value, bx[1][1]))
        } else {
            (Point::new(bx[0][0], *value), Point::new(bx[0][1], *value))
        }]),
        PointSet::GreatCircle { axis } => {
            let lines = match axis {
                Ambient::X => vec![PointSet::coord_line(1, 0.5 * PI), PointSet::coord_line(1, 1.5 * PI)],
                Ambient::Y => vec![PointSet::coord_line(1, 0.0), PointSet::coord_line(1, PI)],
                Ambient::Z => vec![PointSet::coord_line(0, 0.0)],
            };
            chart_segments(&PointSet::Union(lines), surface)
        }
        PointSet::Union(parts) => {
            let mut out = Vec::new();
            for p in parts {
                out.extend(chart_segments(p, surface)?);
            }
            Some(out)
        }
        PointSet::Disc { .. } | PointSet::Band { .. } => None,
    }
}

/// Distance from the origin to the triangle with vertices `v`.
fn point_triangle_distance(v: &[[f64; 2]]) -> f64 {
    let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
    let s: Vec<f64> = (0..3).map(|i| cross(v[i], v[(i + 1) % 3])).collect();
    if s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0) {
        return 0.0;
    }
    (0..3)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % 3]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let l2 = e[0] * e[0] + e[1] * e[1];
            let t = if l2 > 0.0 { (-(a[0] * e[0] + a[1] * e[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
            (a[0] + t * e[0]).hypot(a[1] + t * e[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Mark every node whose interpolation weight is positive somewhere on the
/// segment `a b`.
fn mark_segment(grid: &Grid, a: Point, b: Point, bit: u64, masks: &mut [u64]) {
    let h = grid.spacing();
    let ua = [(a.p - grid.lo[0]) / h[0], (a.q - grid.lo[1]) / h[1]];
    let ub = [(b.p - grid.lo[0]) / h[0], (b.q - grid.lo[1]) / h[1]];
    let range = |axis: usize| {
        let lo = ua[axis].min(ub[axis]).floor() as isize - 1;
        let hi = ua[axis].max(ub[axis]).floor() as isize + 1;
        if grid.periodic[axis] {
            (lo, hi)
        } else {
            (lo.max(0), hi.min(grid.n[axis] as isize - 1))
        }
    };
    let ((i0, i1), (j0, j1)) = (range(0), range(1));
    const W: f64 = 1e-12;
    for j in j0..=j1 {
        for i in i0..=i1 {
            // Local coordinates along the segment: u(t) = u0 + t du.
            let u0 = ua[0] - i as f64;
            let v0 = ua[1] - j as f64;
            let (du, dv) = (ub[0] - ua[0], ub[1] - ua[1]);
            let n00 = grid.index_wrapped(i, j);
            let n10 = grid.index_wrapped(i + 1, j);
            let n11 = grid.index_wrapped(i + 1, j + 1);
            let n01 = grid.index_wrapped(i, j + 1);
            // Barycentric weights as affine functions (c, d) of t.
            let lower = [
                (n00, 1.0 - u0, -du),
                (n10, u0 - v0, du - dv),
                (n11, v0, dv),
            ];
            let upper = [
                (n00, 1.0 - v0, -dv),
                (n11, u0, du),
                (n01, v0 - u0, dv - du),
            ];
            for tri in [lower, upper] {
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                for &(_, c, d) in &tri {
                    // c + d t ≥ −W
                    if d.abs() < 1e-300 {
                        if c < -W {
                            t0 = 2.0;
                        }
                    } else if d > 0.0 {
                        t0 = t0.max((-W - c) / d);
                    } else {
                        t1 = t1.min((-W - c) / d);
                    }
                }
                if t0 > t1 {
                    continue;
                }
                for &(k, c, d) in &tri {
                    if (c + d * t0).max(c + d * t1) > 1e3 * W {
                        masks[k] |= bit;
                    }
                }
            }
        }
    }
}

/// Per-node allowed value polygons on one grid.
struct Constraints {
    poly_of_node: Vec<usize>,
    polys: Vec<Polygon>,
}

const PADDING_BIT: u64 = 1 << 63;

impl Constraints {
    fn build(scene: &Scene, grid: &Grid, r: f64) -> Result<Self> {
        let s = &scene.surface;
        let class = &scene.class;
        let edges = class.edges();
        if edges.len() > 63 {
            return Err(Error::InvalidArgument("at most 63 sets are supported".into()));
        }
        let mut base: Vec<Affine> = Vec::new();
        if class.kind != ClassKind::FN {
            base.extend(edges.iter().copied());
        } else if let Omega::Disc { center, radius } = class.omega() {
            let apothem = radius * (PI / DISC_SIDES as f64).cos();
            for k in 0..DISC_SIDES {
                let t = 2.0 * PI * k as f64 / DISC_SIDES as f64;
                let (sn, cs) = t.sin_cos();
                base.push(Affine::new(-cs, -sn, apothem + cs * center.p + sn * center.q));
            }
        }
        let h = grid.spacing();
        let reach = r + (2.0 / 3.0) * h[0].hypot(h[1]) + 1e-12;
        let mut masks = vec![0u64; grid.node_count()];
        let mut coarse = 0u64;
        for (i, set) in scene.sets.iter().enumerate().take(edges.len()) {
            match chart_segments(&set.descriptor, s) {
                Some(segs) if r == 0.0 => {
                    for (a, b) in segs {
                        mark_segment(grid, a, b, 1 << i, &mut masks);
                    }
                }
                _ => match &set.descriptor {
                    PointSet::Disc { center, radius } => {
                        for t in 0..grid.triangle_count() {
                            let tri = grid.triangle(t);
                            let c = grid.triangle_centroid(t);
                            if s.distance(*center, c) > radius + reach {
                                continue;
                            }
                            // Vertices relative to the centre, unwrapped around the centroid.
                            let dc = s.delta(*center, c);
                            let local: [[f64; 2]; 3] = if t % 2 == 0 {
                                [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]
                            } else {
                                [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
                            };
                            let cl = if t % 2 == 0 { [2.0 / 3.0, 1.0 / 3.0] } else { [1.0 / 3.0, 2.0 / 3.0] };
                            let v: Vec<[f64; 2]> = local
                                .iter()
                                .map(|l| [dc[0] + (l[0] - cl[0]) * h[0], dc[1] + (l[1] - cl[1]) * h[1]])
                                .collect();
                            if point_triangle_distance(&v) < r + radius {
                                for k in tri {
                                    masks[k] |= 1 << i;
                                }
                            }
                        }
                    }
                    _ => coarse |= 1 << i,
                },
            }
        }
        if coarse != 0 {
            let tri_masks: Vec<u64> = (0..grid.triangle_count())
                .into_par_iter()
                .map(|t| {
                    let c = grid.triangle_centroid(t);
                    let mut m = 0u64;
                    for (i, set) in scene.sets.iter().enumerate().take(edges.len()) {
                        if coarse & (1 << i) != 0 && set.descriptor.distance(s, c) <= reach {
                            m |= 1 << i;
                        }
                    }
                    m
                })
                .collect();
            for (t, &m) in tri_masks.iter().enumerate() {
                if m != 0 {
                    for k in grid.triangle(t) {
                        masks[k] |= m;
                    }
                }
            }
        }
        if s.kind() == SurfaceKind::PlaneSquare {
            for (k, m) in masks.iter_mut().enumerate() {
                let x = grid.node_at(k);
                let near = [(0.0, 0.0), (h[0], 0.0), (-h[0], 0.0), (0.0, h[1]), (0.0, -h[1])]
                    .iter()
                    .any(|&(dp, dq)| s.in_padding(x.offset(dp, dq)));
                if near {
                    *m |= PADDING_BIT;
                }
            }
        }
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut polys = Vec::new();
        let mut poly_of_node = Vec::with_capacity(masks.len());
        for (k, &m) in masks.iter().enumerate() {
            let id = match index.get(&m) {
                Some(&id) => id,
                None => {
                    let poly = if m & PADDING_BIT != 0 {
                        Polygon {
                            halfplanes: Vec::new(),
                            vertices: vec![[0.0, 0.0]],
                        }
                    } else {
                        let mut hp = base.clone();
                        for (i, a) in edges.iter().enumerate() {
                            if m & (1 << i) != 0 {
                                hp.push(Affine::new(-a.alpha, -a.beta, -a.gamma));
                            }
                        }
                        Polygon::new(hp).ok_or_else(|| {
                            let x = grid.node_at(k);
                            let names: Vec<&str> = (0..edges.len())
                                .filter(|i| m & (1 << i) != 0)
                                .map(|i| scene.sets[i].name.as_str())
                                .collect();
                            Error::Infeasible(format!(
                                "no admissible value near ({:.4}, {:.4}) where sets {names:?} meet",
                                x.p, x.q
                            ))
                        })?
                    };
                    polys.push(poly);
                    index.insert(m, polys.len() - 1);
                    polys.len() - 1
                }
            };
            poly_of_node.push(id);
        }
        Ok(Constraints { poly_of_node, polys })
    }

    fn project(&self, f: &mut [f64], g: &mut [f64]) {
        for (k, &id) in self.poly_of_node.iter().enumerate() {
            let y = self.polys[id].project([f[k], g[k]]);
            f[k] = y[0];
            g[k] = y[1];
        }
    }

    fn value_box(&self) -> [[f64; 2]; 2] {
        let mut b = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
        for p in &self.polys {
            for v in &p.vertices {
                for a in 0..2 {
                    b[a][0] = b[a][0].min(v[a]);
                    b[a][1] = b[a][1].max(v[a]);
                }
            }
        }
        b
    }
}

/// Triangle brackets and the gradient of `(1/T) log Σ (e^{T b} + e^{−T b})`
/// with respect to the node values. Returns `max |b|`.
fn bracket_and_gradient(
    grid: &Grid,
    density: f64,
    f: &[f64],
    g: &[f64],
    temp: f64,
    b: &mut [f64],
    gf: &mut [f64],
    gg: &mut [f64],
) -> f64 {
    let h = grid.spacing();
    let mut max = 0.0f64;
    for (t, bt) in b.iter_mut().enumerate() {
        let fp = grid.triangle_gradient(f, t);
        let gp = grid.triangle_gradient(g, t);
        *bt = (fp[1] * gp[0] - fp[0] * gp[1]) / density;
        max = max.max(bt.abs());
    }
    gf.iter_mut().for_each(|x| *x = 0.0);
    gg.iter_mut().for_each(|x| *x = 0.0);
    let mut z = 0.0;
    for &bt in b.iter() {
        z += (temp * (bt.abs() - max)).exp();
    }
    for (t, &bt) in b.iter().enumerate() {
        let w = bt.signum() * (temp * (bt.abs() - max)).exp() / z;
        if w.abs() < 1e-300 {
            continue;
        }
        let fp = grid.triangle_gradient(f, t);
        let gp = grid.triangle_gradient(g, t);
        // d b / d(F_p, F_q, G_p, G_q)
        let d = [-gp[1] / density, gp[0] / density, fp[1] / density, -fp[0] / density];
        let [a, bb, c] = grid.triangle(t);
        let (dp, dq) = (w / h[0], w / h[1]);
        if t % 2 == 0 {
            // F_p = (F_b − F_a)/h_p, F_q = (F_c − F_b)/h_q
            gf[bb] += d[0] * dp - d[1] * dq;
            gf[a] -= d[0] * dp;
            gf[c] += d[1] * dq;
            gg[bb] += d[2] * dp - d[3] * dq;
            gg[a] -= d[2] * dp;
            gg[c] += d[3] * dq;
        } else {
            // F_p = (F_b − F_c)/h_p, F_q = (F_c − F_a)/h_q
            gf[bb] += d[0] * dp;
            gf[c] += d[1] * dq - d[0] * dp;
            gf[a] -= d[1] * dq;
            gg[bb] += d[2] * dp;
            gg[c] += d[3] * dq - d[2] * dp;
            gg[a] -= d[3] * dq;
        }
    }
    max
}

fn max_bracket(grid: &Grid, density: f64, f: &[f64], g: &[f64]) -> f64 {
    (0..grid.triangle_count())
        .map(|t| {
            let a = grid.triangle_gradient(f, t);
            let b = grid.triangle_gradient(g, t);
            ((a[1] * b[0] - a[0] * b[1]) / density).abs()
        })
        .fold(0.0, f64::max)
}

/// Heavy-ball descent whose step is scaled so that the node with the
/// largest momentum moves by exactly `lr`.
struct Descent {
    m: Vec<f64>,
}

impl Descent {
    const MOMENTUM: f64 = 0.9;

    fn new(n: usize) -> Self {
        Descent { m: vec![0.0; n] }
    }

    /// One step on `x` given gradients `grad`; blocks share one momentum
    /// buffer in order.
    fn step(&mut self, x: &mut [&mut [f64]], grad: &[&[f64]], lr: f64) {
        let mut k = 0;
        let mut top = 0.0f64;
        for gb in grad {
            for &gi in gb.iter() {
                self.m[k] = Self::MOMENTUM * self.m[k] + gi;
                top = top.max(self.m[k].abs());
                k += 1;
            }
        }
        if !(top > 0.0) || !top.is_finite() {
            return;
        }
        let c = lr / top;
        let mut k = 0;
        for xb in x.iter_mut() {
            for xi in xb.iter_mut() {
                *xi -= c * self.m[k];
                k += 1;
            }
        }
    }
}

fn geometric(a: [f64; 2], frac: f64) -> f64 {
    a[0] * (a[1] / a[0]).powf(frac)
}

/// Jacobi smoothing of node values.
fn smooth(grid: &Grid, v: &mut [f64], sweeps: usize) {
    let (m0, m1) = (grid.nodes(0), grid.nodes(1));
    for _ in 0..sweeps {
        let old = v.to_vec();
        for j in 0..m1 {
            for i in 0..m0 {
                let (ii, jj) = (i as isize, j as isize);
                let s = old[grid.index_wrapped(ii + 1, jj)]
                    + old[grid.index_wrapped(ii - 1, jj)]
                    + old[grid.index_wrapped(ii, jj + 1)]
                    + old[grid.index_wrapped(ii, jj - 1)];
                v[grid.index(i, j)] = 0.5 * old[grid.index(i, j)] + 0.125 * s;
            }
        }
    }
}

struct Level {
    grid: Grid,
    constraints: Constraints,
}

struct Outcome {
    best: f64,
    grid: Grid,
    f: Vec<f64>,
    g: Vec<f64>,
    trace: Vec<TracePoint>,
}

fn run_restart(
    scene: &Scene,
    levels: &[Level],
    init: (Vec<f64>, Vec<f64>),
    config: &OptimizerConfig,
) -> Outcome {
    let density = scene.surface.density();
    let (mut f, mut g) = init;
    let mut best = Outcome {
        best: f64::INFINITY,
        grid: levels[0].grid.clone(),
        f: Vec::new(),
        g: Vec::new(),
        trace: Vec::new(),
    };
    let mut trace = Vec::new();
    let mut global_iter = 0;
    for (li, level) in levels.iter().enumerate() {
        let grid = &level.grid;
        if li > 0 {
            let prev = &levels[li - 1].grid;
            f = prev.refine_linear(&f).1;
            g = prev.refine_linear(&g).1;
        }
        level.constraints.project(&mut f, &mut g);
        let n_nodes = grid.node_count();
        let mut b = vec![0.0; grid.triangle_count()];
        let mut gf = vec![0.0; n_nodes];
        let mut gg = vec![0.0; n_nodes];
        let mut opt = Descent::new(2 * n_nodes);
        // Coarse levels take proportionally larger steps.
        let lr_scale = config.grid as f64 / grid.n[0] as f64;
        let iters = config.iters / levels.len() + usize::from(li + 1 == levels.len()) * (config.iters % levels.len());
        for _ in 0..iters {
            let frac = if config.iters > 1 {
                global_iter as f64 / (config.iters - 1) as f64
            } else {
                1.0
            };
            let temp = geometric(config.temperature, frac);
            let lr = geometric(config.lr, frac) * lr_scale;
            let current = bracket_and_gradient(grid, density, &f, &g, temp, &mut b, &mut gf, &mut gg);
            if current < best.best {
                best.best = current;
                best.grid = grid.clone();
                best.f.clone_from(&f);
                best.g.clone_from(&g);
            }
            if global_iter % config.trace_every == 0 {
                trace.push(TracePoint {
                    iteration: global_iter,
                    grid: grid.n[0],
                    temperature: temp,
                    current,
                    best: best.best,
                });
            }
            opt.step(&mut [&mut f, &mut g], &[&gf, &gg], lr);
            level.constraints.project(&mut f, &mut g);
            global_iter += 1;
        }
        let current = max_bracket(grid, density, &f, &g);
        if current < best.best {
            best.best = current;
            best.grid = grid.clone();
            best.f.clone_from(&f);
            best.g.clone_from(&g);
        }
        trace.push(TracePoint {
            iteration: global_iter,
            grid: grid.n[0],
            temperature: config.temperature[1],
            current,
            best: best.best,
        });
    }
    best.trace = trace;
    best
}

fn noise_init(grid: &Grid, constraints: &Constraints, seed: u64, restart: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, restart as u64);
    let b = constraints.value_box();
    let mut draw = |axis: usize| -> Vec<f64> {
        let (lo, hi) = (b[axis][0], b[axis][1]);
        let mut v: Vec<f64> = (0..grid.node_count()).map(|_| rng.gen_range(lo..=hi)).collect();
        smooth(grid, &mut v, 20);
        v
    };
    let f = draw(0);
    let g = draw(1);
    (f, g)
}

/// Node values of a scene pair on the finest grid, projected. A
/// quadrilateral construction is rebuilt with wider corner windows when
/// that lowers the projected bracket: windows narrower than a cell are
/// flattened by the projection.
fn seed_values(scene: &Scene, spec: &PairSpec, level: &Level) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &level.grid;
    let density = scene.surface.density();
    let sample = |spec: &PairSpec| -> Result<(f64, (Vec<f64>, Vec<f64>))> {
        let (f, g) = realize_pair_spec(scene, spec)?;
        let (mut fv, mut gv) = (grid.sample(|x| f.value(x)), grid.sample(|x| g.value(x)));
        level.constraints.project(&mut fv, &mut gv);
        Ok((max_bracket(grid, density, &fv, &gv), (fv, gv)))
    };
    let mut best = sample(spec)?;
    if let PairSpec::Factory { name, params } = spec {
        if let (true, Some(d)) = (name == "quadrilateral-pair", params.get("delta")) {
            for k in 1..=6 {
                let mut p = params.clone();
                p.insert("delta".into(), Real(d.0 * 2f64.powi(k)));
                let alt = PairSpec::Factory {
                    name: name.clone(),
                    params: p,
                };
                if let Ok(c) = sample(&alt) {
                    if c.0 < best.0 {
                        best = c;
                    }
                }
            }
        }
    }
    Ok(best.1)
}

fn class_radius(scene: &Scene, config: &OptimizerConfig) -> f64 {
    if let Some(r) = config.op_radius {
        return r;
    }
    let c = &scene.class;
    if c.kind.is_primed() {
        c.op_radius(&scene.surface)
    } else {
        0.0
    }
}

/// Upper bound on the scene's pb by projected descent with restarts.
///
/// Restart 0 starts from the scene's first pair when it has one; the
/// others start from smoothed projected noise on the coarsest grid.
pub fn estimate_pb(scene: &Scene, config: &OptimizerConfig) -> Result<PbEstimate> {
    scene.validate()?;
    config.validate()?;
    let r = class_radius(scene, config);
    let s = &scene.surface;
    let sizes = config.level_sizes();
    // Coarse levels where the sets cannot be separated are skipped.
    let mut levels: Vec<Level> = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let grid = Grid::for_surface(s, n);
        match Constraints::build(scene, &grid, r) {
            Ok(constraints) => levels.push(Level { grid, constraints }),
            Err(Error::Infeasible(_)) if i + 1 < sizes.len() => {}
            Err(e) => return Err(e),
        }
    }
    let fine = levels.last().expect("at least one level");
    let seed_pair = match scene.pairs.first() {
        Some(p) => Some((p.name.clone(), seed_values(scene, &p.pair, fine)?)),
        None => None,
    };

    let outcomes: Vec<(Outcome, Option<String>)> = (0..config.restarts)
        .into_par_iter()
        .map(|k| match (&seed_pair, k) {
            (Some((name, init)), 0) => {
                let fine = &levels[levels.len() - 1..];
                (run_restart(scene, fine, init.clone(), config), Some(name.clone()))
            }
            _ => {
                let init = noise_init(&levels[0].grid, &levels[0].constraints, config.seed, k);
                (run_restart(scene, &levels, init, config), None)
            }
        })
        .collect();

    let (best_restart, _) = outcomes
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, (o, _))| if o.best < acc.1 { (k, o.best) } else { acc });
    let restarts = outcomes
        .iter()
        .enumerate()
        .map(|(k, (o, seeded))| RestartSummary {
            restart: k,
            seeded_from: seeded.clone(),
            best: o.best,
        })
        .collect();
    let (best, _) = outcomes.into_iter().nth(best_restart).expect("at least one restart");

    let f = GridField::new(best.grid.clone(), best.f, Interp::Linear);
    let g = GridField::new(best.grid.clone(), best.g, Interp::Linear);
    let (fs, gs) = (ScalarField::from_grid(s, f.clone()), ScalarField::from_grid(s, g.clone()));
    let report = sup_norm_with(&poisson_bracket(&fs, &gs)?, SupOptions::default());
    let admissibility = check_admissible(&fs, &gs, scene);
    if !admissibility.passed() {
        let w = admissibility.worst().expect("a failed condition");
        return Err(Error::Infeasible(format!(
            "best pair is not admissible: {} (violation {:.3e})",
            w.name, w.worst_violation
        )));
    }
    let certificate = if scene.regions.is_empty() {
        None
    } else {
        Some(scene_lower_bound(&fs, &gs, scene)?)
    };
    let gap = certificate
        .as_ref()
        .filter(|c| c.value > 0.0)
        .map(|c| report.upper() / c.value);
    Ok(PbEstimate {
        upper_bound: report.sup_norm,
        upper_error: report.margin,
        certificate,
        gap,
        grid: best.grid.n[0],
        best_restart,
        restarts,
        trace: best.trace,
        admissibility,
        f,
        g,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMethod {
    /// The pair itself already has bracket at most `s`.
    Identity,
    Interpolation,
    Construction,
    FreeSearch,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileEstimate {
    pub s: f64,
    /// Measured uniform distance from the input pair to the candidate.
    pub rho_upper: f64,
    /// Sampling error budget of `rho_upper`.
    pub rho_error: f64,
    /// Measured bracket sup of the candidate.
    pub bracket: f64,
    pub method: ProfileMethod,
    #[serde(skip)]
    pub candidate: (ScalarField, ScalarField),
}

const PROFILE_SAMPLES: usize = 256;

fn measured_bracket(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    let opts = SupOptions {
        n: PROFILE_SAMPLES,
        refine_levels: 8,
    };
    Ok(sup_norm_with(&poisson_bracket(f, g)?, opts).sup_norm)
}

fn pair_distance(f: &ScalarField, g: &ScalarField, h: &ScalarField, k: &ScalarField) -> Result<f64> {
    Ok(sup_distance(f, h, PROFILE_SAMPLES)? + sup_distance(g, k, PROFILE_SAMPLES)?)
}

fn is_sphere_square_pair(f: &ScalarField, g: &ScalarField) -> Result<bool> {
    let s = f.surface();
    if s.kind() != SurfaceKind::RoundSphere || (s.area() - 4.0 * PI).abs() > 1e-12 {
        return Ok(false);
    }
    let x2 = ScalarField::from_expr(s, "x^2")?;
    let y2 = ScalarField::from_expr(s, "y^2")?;
    Ok(sup_distance(f, &x2, 64)? < 1e-9 && sup_distance(g, &y2, 64)? < 1e-9)
}

/// Keep `cand` if its bracket is at most `s` and it is closer than `best`.
fn offer(
    best: &mut Option<ProfileEstimate>,
    f: &ScalarField,
    g: &ScalarField,
    s: f64,
    rho_error: f64,
    cand: (ScalarField, ScalarField),
    method: ProfileMethod,
) -> Result<()> {
    let bracket = measured_bracket(&cand.0, &cand.1)?;
    if bracket > s + PROFILE_TOL * s.max(1.0) {
        return Ok(());
    }
    let rho = pair_distance(f, g, &cand.0, &cand.1)?;
    if best.as_ref().map_or(true, |e| rho < e.rho_upper) {
        *best = Some(ProfileEstimate {
            s,
            rho_upper: rho,
            rho_error,
            bracket,
            method,
            candidate: cand,
        });
    }
    Ok(())
}

/// Upper estimate of `ρ_{F,G}(s)`: the best measured candidate among the
/// pair itself, the half-constant interpolation (either factor), the sphere
/// construction for `(x², y²)`, and an optional free search.
pub fn estimate_profile(
    f: &ScalarField,
    g: &ScalarField,
    s: f64,
    config: &OptimizerConfig,
) -> Result<ProfileEstimate> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("s must be non-negative, got {s}")));
    }
    if f.surface() != g.surface() {
        return Err(Error::SurfaceMismatch);
    }
    let b = measured_bracket(f, g)?;
    let rho_error = 2.0 * f.surface().resolution();
    if b <= s {
        return Ok(ProfileEstimate {
            s,
            rho_upper: 0.0,
            rho_error: 0.0,
            bracket: b,
            method: ProfileMethod::Identity,
            candidate: (f.clone(), g.clone()),
        });
    }
    let mut cands: Vec<((ScalarField, ScalarField), ProfileMethod)> = Vec::new();
    let t = s / b;
    if let Ok(c) = half_constant_interpolation(f, g, t) {
        cands.push((c, ProfileMethod::Interpolation));
    }
    if let Ok((k, h)) = half_constant_interpolation(g, f, t) {
        cands.push(((h, k), ProfileMethod::Interpolation));
    }
    if is_sphere_square_pair(f, g)? {
        let eps = s.sqrt() / 8.0;
        if eps < 0.125 {
            let p = sphere_profile_pair(eps)?;
            cands.push(((p.f, p.g), ProfileMethod::Construction));
        }
    }
    // Uniform shrink towards the midpoints always lies in K_s.
    let c = t.sqrt();
    let mid = |x: &ScalarField| {
        let v = Grid::for_surface(x.surface(), 64).sample(|p| x.value(p));
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
        0.5 * (lo + hi)
    };
    cands.push((
        (f.affine(c, (1.0 - c) * mid(f)), g.affine(c, (1.0 - c) * mid(g))),
        ProfileMethod::Interpolation,
    ));
    let mut best: Option<ProfileEstimate> = None;
    for (cand, method) in cands {
        offer(&mut best, f, g, s, rho_error, cand, method)?;
    }
    if config.free_search_iters > 0 {
        if let Some(start) = best.as_ref().map(|e| e.candidate.clone()) {
            let cand = free_search(f, g, &start, s, config)?;
            offer(&mut best, f, g, s, rho_error, cand, ProfileMethod::FreeSearch)?;
        }
    }
    best.ok_or_else(|| Error::Infeasible(format!("no profile candidate with bracket <= {s}")))
}

/// Projected-free descent on `‖F−H‖ + ‖G−K‖ + μ·max(0, ‖{H,K}‖ − s)²` over
/// piecewise-linear `(H, K)`, followed by an affine shrink of `H` that
/// enforces the bracket bound exactly.
fn free_search(
    f: &ScalarField,
    g: &ScalarField,
    start: &(ScalarField, ScalarField),
    s: f64,
    config: &OptimizerConfig,
) -> Result<(ScalarField, ScalarField)> {
    let surface = f.surface();
    let grid = Grid::for_surface(surface, config.grid);
    let density = surface.density();
    let fv = grid.sample(|x| f.value(x));
    let gv = grid.sample(|x| g.value(x));
    let mut h = grid.sample(|x| start.0.value(x));
    let mut k = grid.sample(|x| start.1.value(x));
    let n = grid.node_count();
    let mut b = vec![0.0; grid.triangle_count()];
    let (mut bh, mut bk) = (vec![0.0; n], vec![0.0; n]);
    let (mut dh, mut dk) = (vec![0.0; n], vec![0.0; n]);
    let mut opt = Descent::new(2 * n);
    let iters = config.free_search_iters;
    let soft_abs_max = |d: &[f64], temp: f64, out: &mut [f64]| {
        let m = d.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let z: f64 = d.iter().map(|&x| (temp * (x.abs() - m)).exp()).sum();
        for (o, &x) in out.iter_mut().zip(d) {
            *o = x.signum() * (temp * (x.abs() - m)).exp() / z;
        }
        m + z.ln() / temp
    };
    for it in 0..iters {
        let frac = if iters > 1 { it as f64 / (iters - 1) as f64 } else { 1.0 };
        let temp = geometric(config.temperature, frac);
        let lr = geometric(config.lr, frac);
        bracket_and_gradient(&grid, density, &h, &k, temp, &mut b, &mut bh, &mut bk);
        let m = b.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let z: f64 = b.iter().map(|&x| (temp * (x.abs() - m)).exp()).sum();
        let lse = m + z.ln() / temp;
        let excess = (lse - s).max(0.0);
        let dfh: Vec<f64> = h.iter().zip(&fv).map(|(a, c)| a - c).collect();
        let dgk: Vec<f64> = k.iter().zip(&gv).map(|(a, c)| a - c).collect();
        soft_abs_max(&dfh, temp, &mut dh);
        soft_abs_max(&dgk, temp, &mut dk);
        let w = 2.0 * config.penalty * excess;
        for i in 0..n {
            dh[i] += w * bh[i];
            dk[i] += w * bk[i];
        }
        opt.step(&mut [&mut h, &mut k], &[&dh, &dk], lr);
    }
    let bmax = max_bracket(&grid, density, &h, &k);
    if bmax > s {
        let c = s / bmax;
        let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
        let mid = 0.5 * (lo + hi);
        h.iter_mut().for_each(|v| *v = c * *v + (1.0 - c) * mid);
    }
    Ok((
        ScalarField::from_grid(surface, GridField::new(grid.clone(), h, Interp::Linear)),
        ScalarField::from_grid(surface, GridField::new(grid, k, Interp::Linear)),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfileBounds {
    pub lower: f64,
    pub upper: f64,
    /// Set when `p ≤ 0`: no lower bound beyond 0 is available.
    pub dichotomy_zero: bool,
}

/// Lower bound from `pb = p` and upper bound from the interpolation, both
/// clipped at 0.
pub fn theoretical_profile_bounds(p: f64, bracket_norm: f64, s: f64, kind: ClassKind) -> Result<ProfileBounds> {
    if !(s >= 0.0) || !(bracket_norm >= 0.0) {
        return Err(Error::InvalidArgument("s and the bracket norm must be non-negative".into()));
    }
    let upper = if bracket_norm > 0.0 {
        (0.5 - s / (2.0 * bracket_norm)).max(0.0)
    } else {
        0.0
    };
    if !(p > 0.0) {
        return Ok(ProfileBounds {
            lower: 0.0,
            upper,
            dichotomy_zero: true,
        });
    }
    let lower = match kind {
        ClassKind::F3 | ClassKind::F3Prime => 0.5 - s.sqrt() / (2.0 * p.sqrt()),
        ClassKind::F4 | ClassKind::F4Prime => 0.5 - s / (2.0 * p),
        ClassKind::FN => {
            return Err(Error::InvalidArgument("profile bounds are stated for pb3 and pb4 classes".into()))
        }
    }
    .max(0.0);
    Ok(ProfileBounds {
        lower,
        upper,
        dichotomy_zero: false,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileCurve {
    pub points: Vec<ProfileEstimate>,
    /// `3 min(‖F‖, ‖G‖)`.
    pub lipschitz_constant: f64,
    /// Consecutive `(s₁, s₂)` where `s·rho_upper(s)` changes faster than
    /// the Lipschitz constant allows. Diagnostic only: `rho_upper` is an
    /// upper bound, not `ρ` itself.
    pub lipschitz_violations: Vec<[f64; 2]>,
}

pub fn profile_curve(
    f: &ScalarField,
    g: &ScalarField,
    s_values: &[f64],
    config: &OptimizerConfig,
) -> Result<ProfileCurve> {
    let points = s_values
        .iter()
        .map(|&s| estimate_profile(f, g, s, config))
        .collect::<Result<Vec<_>>>()?;
    let opts = SupOptions {
        n: PROFILE_SAMPLES,
        refine_levels: 8,
    };
    let lip = 3.0 * sup_norm_with(f, opts).sup_norm.min(sup_norm_with(g, opts).sup_norm);
    let mut sorted: Vec<&ProfileEstimate> = points.iter().collect();
    sorted.sort_by(|a, b| a.s.total_cmp(&b.s));
    let lipschitz_violations = sorted
        .windows(2)
        .filter(|w| {
            let (a, b) = (w[0], w[1]);
            let ds = b.s - a.s;
            ds > 0.0 && (b.s * b.rho_upper - a.s * a.rho_upper).abs() > lip * ds + 1e-9
        })
        .map(|w| [w[0].s, w[1].s])
        .collect();
    Ok(ProfileCurve {
        points,
        lipschitz_constant: lip,
        lipschitz_violations,
    })
}
