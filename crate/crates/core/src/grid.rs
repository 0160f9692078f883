//! Uniform chart grids and grid-backed fields.
//!
//! A grid has `n` cells per axis. Periodic axes have `n` nodes (node `n`
//! is node `0`), other axes have `n + 1` nodes including both ends. Each
//! cell is split along its `(i,j)–(i+1,j+1)` diagonal into a lower and an
//! upper triangle; the piecewise-linear interpolant on these triangles is
//! what the optimizer works with.

use rayon::prelude::*;

use crate::geometry::{Point, Surface};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub periodic: [bool; 2],
}

impl Grid {
    pub fn new(n: [usize; 2], lo: [f64; 2], hi: [f64; 2], periodic: [bool; 2]) -> Self {
        assert!(n[0] >= 2 && n[1] >= 2, "grid needs at least 2 cells per axis");
        Grid { n, lo, hi, periodic }
    }

    pub fn for_surface(surface: &Surface, n: usize) -> Self {
        let b = surface.sampling_box();
        Grid::new([n, n], [b[0][0], b[1][0]], [b[0][1], b[1][1]], surface.periodic())
    }

    pub fn nodes(&self, axis: usize) -> usize {
        if self.periodic[axis] {
            self.n[axis]
        } else {
            self.n[axis] + 1
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes(0) * self.nodes(1)
    }

    pub fn cell_count(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            (self.hi[0] - self.lo[0]) / self.n[0] as f64,
            (self.hi[1] - self.lo[1]) / self.n[1] as f64,
        ]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nodes(0) + i
    }

    /// Node index with periodic wrapping or clamping of out-of-range indices.
    pub fn index_wrapped(&self, i: isize, j: isize) -> usize {
        let w = |k: isize, axis: usize| -> usize {
            let m = self.nodes(axis) as isize;
            if self.periodic[axis] {
                k.rem_euclid(m) as usize
            } else {
                k.clamp(0, m - 1) as usize
            }
        };
        self.index(w(i, 0), w(j, 1))
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        let h = self.spacing();
        Point::new(self.lo[0] + i as f64 * h[0], self.lo[1] + j as f64 * h[1])
    }

    pub fn node_at(&self, k: usize) -> Point {
        let m = self.nodes(0);
        self.node(k % m, k / m)
    }

    /// Corner node indices `[n00, n10, n11, n01]` of cell `(ci, cj)`.
    pub fn cell_nodes(&self, ci: usize, cj: usize) -> [usize; 4] {
        let (i, j) = (ci as isize, cj as isize);
        [
            self.index_wrapped(i, j),
            self.index_wrapped(i + 1, j),
            self.index_wrapped(i + 1, j + 1),
            self.index_wrapped(i, j + 1),
        ]
    }

    /// Triangle `t` (two per cell, lower then upper) as node indices.
    /// Lower: `(n00, n10, n11)`; upper: `(n00, n11, n01)`.
    pub fn triangle(&self, t: usize) -> [usize; 3] {
        let cell = t / 2;
        let [n00, n10, n11, n01] = self.cell_nodes(cell % self.n[0], cell / self.n[0]);
        if t % 2 == 0 {
            [n00, n10, n11]
        } else {
            [n00, n11, n01]
        }
    }

    pub fn triangle_count(&self) -> usize {
        2 * self.cell_count()
    }

    pub fn triangle_centroid(&self, t: usize) -> Point {
        let cell = t / 2;
        let (ci, cj) = (cell % self.n[0], cell / self.n[0]);
        let h = self.spacing();
        let (a, b) = if t % 2 == 0 { (2.0 / 3.0, 1.0 / 3.0) } else { (1.0 / 3.0, 2.0 / 3.0) };
        Point::new(
            self.lo[0] + (ci as f64 + a) * h[0],
            self.lo[1] + (cj as f64 + b) * h[1],
        )
    }

    /// Cell containing `x` and local coordinates in `[0,1]²`.
    pub fn locate(&self, x: Point) -> (usize, usize, f64, f64) {
        let h = self.spacing();
        let c = [x.p, x.q];
        let mut cell = [0usize; 2];
        let mut local = [0.0; 2];
        for a in 0..2 {
            let u = (c[a] - self.lo[a]) / h[a];
            let n = self.n[a] as f64;
            let u = if self.periodic[a] {
                u.rem_euclid(n)
            } else {
                u.clamp(0.0, n)
            };
            let k = (u.floor() as usize).min(self.n[a] - 1);
            cell[a] = k;
            local[a] = (u - k as f64).clamp(0.0, 1.0);
        }
        (cell[0], cell[1], local[0], local[1])
    }

    /// Evaluate `f` at every node, in parallel over rows.
    pub fn sample(&self, f: impl Fn(Point) -> f64 + Sync) -> Vec<f64> {
        let m = self.nodes(0);
        let mut out = vec![0.0; self.node_count()];
        out.par_chunks_mut(m).enumerate().for_each(|(j, row)| {
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(self.node(i, j));
            }
        });
        out
    }

    /// Gradient of the piecewise-linear interpolant on triangle `t`.
    pub fn triangle_gradient(&self, values: &[f64], t: usize) -> [f64; 2] {
        let h = self.spacing();
        let [a, b, c] = self.triangle(t);
        if t % 2 == 0 {
            // (n00, n10, n11)
            [(values[b] - values[a]) / h[0], (values[c] - values[b]) / h[1]]
        } else {
            // (n00, n11, n01)
            [(values[b] - values[c]) / h[0], (values[c] - values[a]) / h[1]]
        }
    }

    /// Refine by a factor of two, interpolating the piecewise-linear function
    /// exactly (the refined triangulation nests in the coarse one).
    pub fn refine_linear(&self, values: &[f64]) -> (Grid, Vec<f64>) {
        let fine = Grid::new(
            [2 * self.n[0], 2 * self.n[1]],
            self.lo,
            self.hi,
            self.periodic,
        );
        let mut out = vec![0.0; fine.node_count()];
        for j in 0..fine.nodes(1) {
            for i in 0..fine.nodes(0) {
                let (ci, cj) = (i / 2, j / 2);
                let v = |di: isize, dj: isize| {
                    values[self.index_wrapped(ci as isize + di, cj as isize + dj)]
                };
                out[fine.index(i, j)] = match (i % 2, j % 2) {
                    (0, 0) => v(0, 0),
                    (1, 0) => 0.5 * (v(0, 0) + v(1, 0)),
                    (0, 1) => 0.5 * (v(0, 0) + v(0, 1)),
                    _ => 0.5 * (v(0, 0) + v(1, 1)),
                };
            }
        }
        (fine, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    /// Catmull–Rom bicubic with centered-difference node partials.
    Cubic,
    /// Piecewise linear on the diagonal triangulation.
    Linear,
}

#[derive(Clone, Debug)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub interp: Interp,
    dp: Vec<f64>,
    dq: Vec<f64>,
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>, interp: Interp) -> Self {
        assert_eq!(values.len(), grid.node_count(), "value count does not match grid");
        let (dp, dq) = if interp == Interp::Cubic {
            centered_partials(&grid, &values)
        } else {
            (Vec::new(), Vec::new())
        };
        GridField {
            grid,
            values,
            interp,
            dp,
            dq,
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        self.eval3(x)[0]
    }

    /// Value and the two partials at `x`.
    pub fn eval3(&self, x: Point) -> [f64; 3] {
        let g = &self.grid;
        let (ci, cj, a, b) = g.locate(x);
        match self.interp {
            Interp::Linear => {
                let [n00, n10, n11, n01] = g.cell_nodes(ci, cj);
                let v = &self.values;
                let h = g.spacing();
                if b <= a {
                    let gp = (v[n10] - v[n00]) / h[0];
                    let gq = (v[n11] - v[n10]) / h[1];
                    [v[n00] + a * (v[n10] - v[n00]) + b * (v[n11] - v[n10]), gp, gq]
                } else {
                    let gp = (v[n11] - v[n01]) / h[0];
                    let gq = (v[n01] - v[n00]) / h[1];
                    [v[n00] + b * (v[n01] - v[n00]) + a * (v[n11] - v[n01]), gp, gq]
                }
            }
            Interp::Cubic => {
                let wa = catmull_rom(a);
                let wb = catmull_rom(b);
                let mut out = [0.0; 3];
                for (dj, wj) in wb.iter().enumerate() {
                    for (di, wi) in wa.iter().enumerate() {
                        let k = g.index_wrapped(ci as isize + di as isize - 1, cj as isize + dj as isize - 1);
                        let w = wi * wj;
                        out[0] += w * self.values[k];
                        out[1] += w * self.dp[k];
                        out[2] += w * self.dq[k];
                    }
                }
                out
            }
        }
    }

    /// Bracket `(F_q G_p − F_p G_q)/ρ` on every triangle of two
    /// piecewise-linear fields sharing a grid.
    pub fn triangle_brackets(f: &GridField, g: &GridField, density: f64) -> Vec<f64> {
        assert_eq!(f.grid, g.grid, "fields on different grids");
        let grid = &f.grid;
        (0..grid.triangle_count())
            .into_par_iter()
            .map(|t| {
                let a = grid.triangle_gradient(&f.values, t);
                let b = grid.triangle_gradient(&g.values, t);
                (a[1] * b[0] - a[0] * b[1]) / density
            })
            .collect()
    }
}

fn centered_partials(grid: &Grid, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = grid.spacing();
    let mut dp = vec![0.0; v.len()];
    let mut dq = vec![0.0; v.len()];
    let (m0, m1) = (grid.nodes(0) as isize, grid.nodes(1) as isize);
    for j in 0..m1 {
        for i in 0..m0 {
            let k = grid.index(i as usize, j as usize);
            let d = |axis: usize| -> f64 {
                let (m, c) = if axis == 0 { (m0, i) } else { (m1, j) };
                let at = |s: isize| {
                    if axis == 0 {
                        v[grid.index_wrapped(i + s, j)]
                    } else {
                        v[grid.index_wrapped(i, j + s)]
                    }
                };
                if grid.periodic[axis] || (c > 0 && c < m - 1) {
                    (at(1) - at(-1)) / (2.0 * h[axis])
                } else if c == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h[axis])
                } else {
                    (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h[axis])
                }
            };
            dp[k] = d(0);
            dq[k] = d(1);
        }
    }
    (dp, dq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn torus_grid(n: usize) -> Grid {
        Grid::new([n, n], [0.0, 0.0], [1.0, 1.0], [true, true])
    }

    #[test]
    fn linear_interpolation_reproduces_affine() {
        let g = Grid::new([8, 8], [0.0, 0.0], [1.0, 1.0], [false, false]);
        let vals = g.sample(|x| 2.0 * x.p - 3.0 * x.q + 1.0);
        let f = GridField::new(g, vals, Interp::Linear);
        let v = f.eval3(Point::new(0.37, 0.81));
        assert_abs_diff_eq!(v[0], 2.0 * 0.37 - 3.0 * 0.81 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], -3.0, epsilon = 1e-12);
    }

    #[test]
    fn cubic_is_accurate_and_periodic() {
        let w = 2.0 * std::f64::consts::PI;
        let g = torus_grid(64);
        let vals = g.sample(|x| (w * x.p).sin() * (w * x.q).cos());
        let f = GridField::new(g, vals, Interp::Cubic);
        for x in [Point::new(0.123, 0.456), Point::new(0.999, 0.001)] {
            let v = f.eval3(x);
            assert_abs_diff_eq!(v[0], (w * x.p).sin() * (w * x.q).cos(), epsilon = 1e-4);
            assert_abs_diff_eq!(v[1], w * (w * x.p).cos() * (w * x.q).cos(), epsilon = 3e-2);
        }
        assert_abs_diff_eq!(
            f.value(Point::new(1.25, -0.5)),
            f.value(Point::new(0.25, 0.5)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn refinement_preserves_linear_function() {
        let g = torus_grid(4);
        let vals: Vec<f64> = (0..g.node_count()).map(|k| ((k * 7919) % 13) as f64).collect();
        let coarse = GridField::new(g.clone(), vals.clone(), Interp::Linear);
        let (fg, fv) = g.refine_linear(&vals);
        let fine = GridField::new(fg, fv, Interp::Linear);
        for k in 0..50 {
            let x = Point::new(0.013 + 0.0197 * k as f64, 0.71 * k as f64 % 1.0);
            assert_abs_diff_eq!(coarse.value(x), fine.value(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn triangle_bracket_of_coordinates() {
        let g = Grid::new([4, 4], [0.0, 0.0], [1.0, 1.0], [false, false]);
        let f = GridField::new(g.clone(), g.sample(|x| x.p), Interp::Linear);
        let h = GridField::new(g.clone(), g.sample(|x| x.q), Interp::Linear);
        for b in GridField::triangle_brackets(&f, &h, 1.0) {
            assert_abs_diff_eq!(b, -1.0, epsilon = 1e-12);
        }
    }
}
