use pbinv::certificates::{check_admissible, stokes_lower_bound};
use pbinv::constructions::{pb3_from_pb4_pair, quadrilateral_pair, triangle_cutoff_map};
use pbinv::dynamics::{energy_drift, hamiltonian_flow};
use pbinv::fields::{area_integral, line_integral_fdg, poisson_bracket, sup_norm_with, ScalarField, SupOptions};
use pbinv::geometry::{Point, Region, Surface};
use pbinv::scenes::torus_quad_scene;
use proptest::prelude::*;

/// Random trigonometric polynomial on the unit torus.
fn trig_field(c: &[f64; 6], k: &[i32; 4]) -> ScalarField {
    let src = format!(
        "{}*sin(2*pi*({}*p + {}*q)) + {}*cos(2*pi*({}*p + {}*q)) + {}*sin(2*pi*p)*cos(2*pi*q) + {}",
        c[0], k[0], k[1], c[1], k[2], k[3], c[2], c[3]
    );
    ScalarField::from_expr(&Surface::unit_torus(), &src).unwrap()
}

fn coeffs() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-1.0f64..1.0)
}

fn freqs() -> impl Strategy<Value = [i32; 4]> {
    prop::array::uniform4(-2i32..=2)
}

fn point() -> impl Strategy<Value = Point> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(p, q)| Point::new(p, q))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bracket_is_antisymmetric_and_bilinear(
        a in coeffs(), ka in freqs(), b in coeffs(), kb in freqs(), c in coeffs(), kc in freqs(),
        s in -2.0f64..2.0, x in point(),
    ) {
        let (f, g, h) = (trig_field(&a, &ka), trig_field(&b, &kb), trig_field(&c, &kc));
        let fg = poisson_bracket(&f, &g).unwrap().value(x);
        let gf = poisson_bracket(&g, &f).unwrap().value(x);
        prop_assert!((fg + gf).abs() <= 1e-12 * (1.0 + fg.abs()));
        let lhs = poisson_bracket(&f.add(&h.affine(s, 0.0)).unwrap(), &g).unwrap().value(x);
        let rhs = fg + s * poisson_bracket(&h, &g).unwrap().value(x);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn leibniz_and_jacobi(
        a in coeffs(), ka in freqs(), b in coeffs(), kb in freqs(), c in coeffs(), kc in freqs(), x in point(),
    ) {
        let (f, g, h) = (trig_field(&a, &ka), trig_field(&b, &kb), trig_field(&c, &kc));
        let lhs = poisson_bracket(&f.mul(&h).unwrap(), &g).unwrap().value(x);
        let rhs = f.value(x) * poisson_bracket(&h, &g).unwrap().value(x)
            + h.value(x) * poisson_bracket(&f, &g).unwrap().value(x);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        let j = |u: &ScalarField, v: &ScalarField, w: &ScalarField| {
            poisson_bracket(u, &poisson_bracket(v, w).unwrap()).unwrap().value(x)
        };
        let terms = [j(&f, &g, &h), j(&g, &h, &f), j(&h, &f, &g)];
        let scale = terms.iter().fold(1.0f64, |m, t| m.max(t.abs()));
        prop_assert!((terms[0] + terms[1] + terms[2]).abs() <= 1e-5 * scale, "{terms:?}");
    }

    #[test]
    fn stokes_identity_within_quadrature_budget(
        a in coeffs(), ka in freqs(), b in coeffs(), kb in freqs(),
        p0 in 0.0f64..0.6, q0 in 0.0f64..0.6, w in 0.1f64..0.4, h in 0.1f64..0.4, disc in any::<bool>(),
    ) {
        let s = Surface::unit_torus();
        let (f, g) = (trig_field(&a, &ka), trig_field(&b, &kb));
        let bracket = poisson_bracket(&f, &g).unwrap();
        let n = 4096;
        let (region, sliver) = if disc {
            let r = 0.5 * w;
            let inscribed = 0.5 * n as f64 * r * r * (2.0 * std::f64::consts::PI / n as f64).sin();
            (Region::disc(Point::new(p0 + r, q0 + r), r), std::f64::consts::PI * r * r - inscribed)
        } else {
            (Region::rectangle([p0, p0 + w], [q0, q0 + h]), 0.0)
        };
        let area = area_integral(&bracket, &region).unwrap();
        let mut line = 0.0;
        let mut line_err = 0.0;
        for lp in region.boundary_loops(&s, n).unwrap() {
            let q = line_integral_fdg(&f, &g, &lp, true).unwrap();
            line += q.value;
            line_err += q.error;
        }
        let sup = sup_norm_with(&bracket, SupOptions { n: 64, refine_levels: 4 }).upper();
        let budget = area.error + line_err + sliver * sup + 1e-12;
        prop_assert!((area.value + line).abs() <= budget, "{} vs {budget}", (area.value + line).abs());
    }

    #[test]
    fn certificate_is_below_the_sup_norm(
        a in coeffs(), ka in freqs(), b in coeffs(), kb in freqs(),
        c in point(), r in 0.05f64..0.3,
    ) {
        let (f, g) = (trig_field(&a, &ka), trig_field(&b, &kb));
        let cert = stokes_lower_bound(&f, &g, &Region::disc(c, r)).unwrap();
        let sup = sup_norm_with(&poisson_bracket(&f, &g).unwrap(), SupOptions { n: 128, refine_levels: 8 });
        prop_assert!(cert.value <= sup.upper(), "{} > {}", cert.value, sup.upper());
    }

    #[test]
    fn flow_reverses(a in coeffs(), ka in freqs(), x in point(), t in 0.1f64..1.0) {
        let g = trig_field(&a, &ka);
        let fwd = hamiltonian_flow(&g, x, [0.0, t], 1e-3).unwrap();
        let back = hamiltonian_flow(&g, fwd.end(), [t, 0.0], 1e-3).unwrap();
        prop_assert!(Surface::unit_torus().distance(back.end(), x) <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn cutoff_jacobian_bounded(kappa in 0.05f64..2.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let map = triangle_cutoff_map(kappa).unwrap();
        let x = if s + t <= 1.0 { [s, t] } else { [1.0 - s, 1.0 - t] };
        prop_assert!(map.jacobian_det(x).abs() <= 1.0 + kappa + 1e-12);
        prop_assert!(map.in_target(map.eval(x), 1e-12));
    }
}

#[test]
fn linear_hamiltonian_conserves_energy_to_round_off() {
    let plane = Surface::plane([0.0, 1.0], [0.0, 1.0], 0.1).unwrap();
    let g = ScalarField::from_expr(&plane, "0.1*p + 0.2*q").unwrap();
    let tr = hamiltonian_flow(&g, Point::new(0.3, 0.3), [0.0, 1.0], 1e-3).unwrap();
    assert!(energy_drift(&tr, &g) < 1e-14);
}

#[test]
fn canonical_sign() {
    let plane = Surface::plane([0.0, 1.0], [0.0, 1.0], 0.0).unwrap();
    let p = ScalarField::from_expr(&plane, "p").unwrap();
    let q = ScalarField::from_expr(&plane, "q").unwrap();
    let b = poisson_bracket(&p, &q).unwrap();
    for x in [Point::new(0.2, 0.7), Point::new(0.9, 0.1)] {
        assert_eq!(b.value(x), -1.0);
    }
}

#[test]
fn pb3_from_pb4_is_admissible_and_dominated() {
    let s = Surface::unit_torus();
    let q = quadrilateral_pair(0.2, 1.0, 0.99, 0.01, &s).unwrap();
    let (f3, g3) = pb3_from_pb4_pair(&q.f, &q.g).unwrap();
    let opts = SupOptions { n: 256, refine_levels: 8 };
    // Pointwise |{F3,G3}| = |G|·|{F,G}| <= |{F,G}|, so the measured sups compare directly.
    let b3 = sup_norm_with(&poisson_bracket(&f3, &g3).unwrap(), opts).sup_norm;
    let b4 = sup_norm_with(&poisson_bracket(&q.f, &q.g).unwrap(), opts).sup_norm;
    assert!(b3 <= b4 * (1.0 + 1e-6), "{b3} > {b4}");
    // F3, G3 >= 0 and F3 + G3 = G <= 1 everywhere, with F3 = 0 where F = 0.
    for k in 0..400 {
        let x = Point::new((k % 20) as f64 / 20.0 + 0.013, (k / 20) as f64 / 20.0 + 0.007);
        let (a, b) = (f3.value(x), g3.value(x));
        assert!(a >= -1e-12 && b >= -1e-12 && a + b <= 1.0 + 1e-12);
        if q.f.value(x) == 0.0 {
            assert_eq!(a, 0.0);
        }
    }
}

#[test]
fn f4_class_symmetries() {
    let scene = torus_quad_scene(0.2);
    let q = quadrilateral_pair(0.2, 1.0, 0.99, 0.01, &scene.surface).unwrap();
    let (f, g) = (q.f.clone(), q.g.clone());
    assert!(check_admissible(&f, &g, &scene).passed());

    let permuted = |order: [usize; 4]| {
        let mut s = scene.clone();
        s.sets = order.iter().map(|&i| scene.sets[i].clone()).collect();
        s
    };
    let one_minus_f = f.affine(-1.0, 1.0);
    assert!(check_admissible(&one_minus_f, &g, &permuted([1, 0, 2, 3])).passed());
    assert!(check_admissible(&g, &f, &permuted([2, 3, 0, 1])).passed());
    // The same permutations without the matching transformation fail.
    assert!(!check_admissible(&f, &g, &permuted([1, 0, 2, 3])).passed());
    assert!(!check_admissible(&f, &g, &permuted([2, 3, 0, 1])).passed());

    let opts = SupOptions { n: 256, refine_levels: 8 };
    let n1 = sup_norm_with(&poisson_bracket(&one_minus_f, &g).unwrap(), opts).sup_norm;
    let n0 = sup_norm_with(&poisson_bracket(&f, &g).unwrap(), opts).sup_norm;
    assert!((n1 - n0).abs() <= 1e-12 * n0);
}
