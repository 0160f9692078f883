//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::Instant;

use rand::Rng;

use pbinv::certificates::{check_admissible, scene_lower_bound, stokes_lower_bound};
use pbinv::constructions::{
    flow_average_function, pb3_from_pb4_pair, quadrilateral_pair, smooth_step, sphere_profile_pair, sup_distance,
    triangle_cutoff_map,
};
use pbinv::dynamics::{energy_drift, hamiltonian_flow, hamiltonian_flow_controlled, min_chord_time_with, ChordOptions};
use pbinv::fields::{area_integral, line_integral_fdg, poisson_bracket, sup_norm_with, ScalarField, SupOptions};
use pbinv::geometry::{NamedSet, Point, PointSet, Region, Surface};
use pbinv::optimizer::{estimate_pb, estimate_profile, OptimizerConfig};
use pbinv::rng::stream_rng;
use pbinv::scenes::{discs_zero_scene, realize_pair, sphere_profile_scene, torus_quad_scene};

struct Check {
    label: String,
    passed: bool,
    detail: String,
}

fn check(label: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        label: label.into(),
        passed,
        detail: detail.into(),
    }
}

fn sup(f: &ScalarField, n: usize) -> f64 {
    sup_norm_with(f, SupOptions { n, refine_levels: 12 }).sup_norm
}

fn bracket_sup(f: &ScalarField, g: &ScalarField, n: usize) -> f64 {
    sup(&poisson_bracket(f, g).unwrap(), n)
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

/// Quadrilateral exact value at A = 0.2.
fn criterion_1() -> Vec<Check> {
    let scene = torus_quad_scene(0.2);
    let (f, g) = realize_pair(&scene, "quad-construction").unwrap();
    let cert = scene_lower_bound(&f, &g, &scene).unwrap();
    let b = bracket_sup(&f, &g, 256);
    let est = estimate_pb(&scene, &OptimizerConfig::default()).unwrap();
    let opt_cert = est.certificate.as_ref().map_or(f64::NAN, |c| c.value);
    vec![
        check("construction certificate = 5.0 within 1%", within(cert.value, 5.0, 0.01), format!("{:.6}", cert.value)),
        check("optimizer-pair certificate = 5.0 within 1%", within(opt_cert, 5.0, 0.01), format!("{opt_cert:.6}")),
        check("construction bracket <= 5.3", b <= 5.3, format!("{b:.4}")),
        check("optimizer upper bound <= 5.5", est.upper_bound <= 5.5, format!("{:.4}", est.upper_bound)),
    ]
}

/// Symmetric case A = 0.5.
fn criterion_2() -> Vec<Check> {
    let scene = torus_quad_scene(0.5);
    let est = estimate_pb(&scene, &OptimizerConfig::default()).unwrap();
    let mut out = vec![check(
        "optimizer upper bound < 11",
        est.upper_bound < 11.0,
        format!("{:.4}", est.upper_bound),
    )];
    let construction = realize_pair(&scene, "quad-construction").unwrap();
    let optimized = est.pair(&scene.surface);
    for (name, (f, g)) in [("construction", construction), ("optimizer", optimized)] {
        let admissible = check_admissible(&f, &g, &scene).passed();
        out.push(check(format!("{name} pair admissible"), admissible, ""));
        for r in &scene.regions {
            let c = stokes_lower_bound(&f, &g, &r.region).unwrap();
            out.push(check(
                format!("{name} certificate on {} = 2.0 within 1%", r.name),
                within(c.value, 2.0, 0.01),
                format!("{:.6}", c.value),
            ));
        }
    }
    out
}

/// Sphere construction guarantees.
fn criterion_3() -> Vec<Check> {
    let s = Surface::round_sphere();
    let x2 = ScalarField::from_expr(&s, "x^2").unwrap();
    let y2 = ScalarField::from_expr(&s, "y^2").unwrap();
    let mut out = Vec::new();
    for eps in [0.02, 0.05, 0.1] {
        let p = sphere_profile_pair(eps).unwrap();
        let b = bracket_sup(&p.f, &p.g, 512);
        let d = sup_distance(&p.f, &x2, 512).unwrap() + sup_distance(&p.g, &y2, 512).unwrap();
        out.push(check(format!("eps {eps}: bracket <= 64 eps^2"), b <= 64.0 * eps * eps, format!("{b:.5}")));
        out.push(check(
            format!("eps {eps}: distance <= 1/2 - eps + 1e-3"),
            d <= 0.5 - eps + 1e-3,
            format!("{d:.5}"),
        ));
    }
    out
}

/// ‖{x², y²}‖ on the round sphere.
fn criterion_4() -> Vec<Check> {
    let s = Surface::round_sphere();
    let f = ScalarField::from_expr(&s, "x^2").unwrap();
    let g = ScalarField::from_expr(&s, "y^2").unwrap();
    let measured = bracket_sup(&f, &g, 256);
    // Oracle: the bracket is 2 z (1 - z²) sin 2φ; maximize over z on a fine grid.
    let n = 1_000_000;
    let oracle = (0..=n)
        .map(|k| {
            let z = k as f64 / n as f64;
            2.0 * z * (1.0 - z * z)
        })
        .fold(0.0, f64::max);
    let closed = 4.0 / (3.0 * 3f64.sqrt());
    vec![
        check("oracle agrees with 4/(3 sqrt 3)", (oracle - closed).abs() < 1e-9, format!("{oracle:.9}")),
        check("measured within 1e-3", (measured - closed).abs() < 1e-3, format!("{measured:.6}")),
    ]
}

/// Chord duality on A = 0.25.
fn criterion_5() -> Vec<Check> {
    let scene = torus_quad_scene(0.25);
    let (f, g) = realize_pair(&scene, "quad-construction").unwrap();
    let cert = scene_lower_bound(&f, &g, &scene).unwrap().value;
    let opts = ChordOptions {
        horizon: 1.0,
        seeds: 64,
        tol: None,
        step: 1e-3,
    };
    let chord = min_chord_time_with(&g, &scene.sets[0].descriptor, &scene.sets[1].descriptor, &opts);
    let t = chord.map_or(f64::NAN, |c| c.length);
    vec![
        check("chord found with time in [0.23, 0.25]", (0.23..=0.25).contains(&t), format!("{t:.5}")),
        check(
            "time <= 1/certificate + 2%",
            t <= 1.02 / cert,
            format!("{t:.5} vs {:.5}", 1.02 / cert),
        ),
    ]
}

/// Flow-average bound.
fn criterion_6() -> Vec<Check> {
    let s = Surface::unit_torus();
    let h = ScalarField::from_expr(&s, "0.5 + 0.5*sin(2*pi*q)").unwrap();
    let g = ScalarField::from_expr(&s, "sin(2*pi*p)/(2*pi)").unwrap();
    [1.0, 2.0, 4.0]
        .into_iter()
        .map(|b| {
            let f = flow_average_function(&h, &g, b).unwrap();
            let m = bracket_sup(&f, &g, 256);
            check(format!("b = {b}: bracket <= 1/b + 1e-3"), m <= 1.0 / b + 1e-3, format!("{m:.5}"))
        })
        .collect()
}

/// Profile sandwich on A = 0.25.
fn criterion_7() -> Vec<Check> {
    let scene = torus_quad_scene(0.25);
    let (f, g) = realize_pair(&scene, "quad-construction").unwrap();
    let b = bracket_sup(&f, &g, 256);
    let p_cert = 4.0;
    let config = OptimizerConfig::default();
    let mut out = Vec::new();
    for k in 0..10 {
        let s = b * k as f64 / 9.0;
        let e = estimate_profile(&f, &g, s, &config).unwrap();
        let lower = 0.5 - s / (2.0 * p_cert);
        let upper = 0.5 - s / (2.0 * b);
        out.push(check(
            format!("s = {s:.3}: sandwich"),
            lower <= e.rho_upper + 1e-3 && e.rho_upper <= upper + 1e-3,
            format!("{lower:.4} <= {:.4} <= {upper:.4}", e.rho_upper),
        ));
    }
    out
}

/// Square-root profile rate on the sphere.
fn criterion_8() -> Vec<Check> {
    let scene = sphere_profile_scene();
    let (f, g) = realize_pair(&scene, "x2-y2").unwrap();
    let config = OptimizerConfig::default();
    [0.02, 0.05, 0.1]
        .into_iter()
        .map(|eps| {
            let e = estimate_profile(&f, &g, 64.0 * eps * eps, &config).unwrap();
            check(
                format!("eps {eps}: rho_upper(64 eps^2) <= 1/2 - eps"),
                e.rho_upper <= 0.5 - eps,
                format!("{:.5} ({:?})", e.rho_upper, e.method),
            )
        })
        .collect()
}

fn trig_field(rng: &mut impl Rng) -> ScalarField {
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k: Vec<i32> = (0..4).map(|_| rng.gen_range(-2..=2)).collect();
    let src = format!(
        "{}*sin(2*pi*({}*p + {}*q)) + {}*cos(2*pi*({}*p + {}*q)) + {}*sin(2*pi*p)*cos(2*pi*q) + {}",
        c[0], k[0], k[1], c[1], k[2], k[3], c[2], c[3]
    );
    ScalarField::from_expr(&Surface::unit_torus(), &src).unwrap()
}

fn random_point(rng: &mut impl Rng) -> Point {
    Point::new(rng.gen(), rng.gen())
}

/// Invariant suites.
fn criterion_9() -> Vec<Check> {
    let torus = Surface::unit_torus();
    let mut rng = stream_rng(9, 0);
    let mut out = Vec::new();

    let (mut anti, mut bilin, mut leib, mut jac) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (f, g, h) = (trig_field(&mut rng), trig_field(&mut rng), trig_field(&mut rng));
        let x = random_point(&mut rng);
        let s: f64 = rng.gen_range(-2.0..2.0);
        let fg = poisson_bracket(&f, &g).unwrap().value(x);
        let hg = poisson_bracket(&h, &g).unwrap().value(x);
        anti = anti.max((fg + poisson_bracket(&g, &f).unwrap().value(x)).abs());
        let lin = poisson_bracket(&f.add(&h.affine(s, 0.0)).unwrap(), &g).unwrap().value(x);
        bilin = bilin.max((lin - fg - s * hg).abs() / (1.0 + fg.abs()));
        let lhs = poisson_bracket(&f.mul(&h).unwrap(), &g).unwrap().value(x);
        leib = leib.max((lhs - f.value(x) * hg - h.value(x) * fg).abs() / (1.0 + lhs.abs()));
        let j = |u: &ScalarField, v: &ScalarField, w: &ScalarField| {
            poisson_bracket(u, &poisson_bracket(v, w).unwrap()).unwrap().value(x)
        };
        let t = [j(&f, &g, &h), j(&g, &h, &f), j(&h, &f, &g)];
        let scale = t.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        jac = jac.max((t[0] + t[1] + t[2]).abs() / scale);
    }
    out.push(check("antisymmetry exact", anti == 0.0, format!("{anti:e}")));
    out.push(check("bilinearity", bilin <= 1e-12, format!("{bilin:e}")));
    out.push(check("leibniz on 100 triples", leib <= 1e-9, format!("{leib:e}")));
    out.push(check("jacobi on 100 triples", jac <= 1e-5, format!("{jac:e}")));

    let mut stokes_ok = 0;
    let mut sound_ok = 0;
    for k in 0..100 {
        let (f, g) = (trig_field(&mut rng), trig_field(&mut rng));
        let bracket = poisson_bracket(&f, &g).unwrap();
        let (p0, q0): (f64, f64) = (rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6));
        let (w, h): (f64, f64) = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4));
        let n = 4096;
        let (region, sliver) = if k % 2 == 0 {
            (Region::rectangle([p0, p0 + w], [q0, q0 + h]), 0.0)
        } else {
            let r = 0.5 * w;
            let inscribed = 0.5 * n as f64 * r * r * (2.0 * std::f64::consts::PI / n as f64).sin();
            (Region::disc(Point::new(p0 + r, q0 + r), r), std::f64::consts::PI * r * r - inscribed)
        };
        let area = area_integral(&bracket, &region).unwrap();
        let (mut line, mut err) = (0.0, 0.0);
        for lp in region.boundary_loops(&torus, n).unwrap() {
            let q = line_integral_fdg(&f, &g, &lp, true).unwrap();
            line += q.value;
            err += q.error;
        }
        let report = sup_norm_with(&bracket, SupOptions { n: 128, refine_levels: 8 });
        if (area.value + line).abs() <= area.error + err + sliver * report.upper() + 1e-12 {
            stokes_ok += 1;
        }
        let cert = stokes_lower_bound(&f, &g, &region).unwrap();
        if cert.value <= report.upper() {
            sound_ok += 1;
        }
    }
    out.push(check("stokes identity on 100 pair/region cases", stokes_ok == 100, format!("{stokes_ok}/100")));
    out.push(check("certificate soundness on 100 pairs", sound_ok == 100, format!("{sound_ok}/100")));

    for kappa in [0.1, 0.5] {
        let map = triangle_cutoff_map(kappa).unwrap();
        let mut worst = 0.0f64;
        let mut outside = 0;
        for _ in 0..10_000 {
            let (s, t): (f64, f64) = (rng.gen(), rng.gen());
            let x = if s + t <= 1.0 { [s, t] } else { [1.0 - s, 1.0 - t] };
            worst = worst.max(map.jacobian_det(x).abs());
            if !map.in_target(map.eval(x), 1e-12) {
                outside += 1;
            }
        }
        out.push(check(
            format!("cutoff map kappa {kappa}: jacobian <= 1+kappa at 1e4 points"),
            worst <= 1.0 + kappa && outside == 0,
            format!("{worst:.6}, {outside} outside"),
        ));
    }

    let delta = 0.1;
    let slope = smooth_step(delta).unwrap().measured_max_slope(100_000);
    out.push(check(
        "smooth-step derivative <= 1+2 delta (delta 0.1)",
        slope <= 1.0 + 2.0 * delta,
        format!("{slope:.5} vs {:.5}; any step from 0 to 1 across [delta, 1-delta] has slope >= 1/(1-2 delta) = {:.5}", 1.0 + 2.0 * delta, 1.0 / (1.0 - 2.0 * delta)),
    ));

    let scene = torus_quad_scene(0.2);
    let q = quadrilateral_pair(0.2, 1.0, 0.99, 0.01, &scene.surface).unwrap();
    let (f3, g3) = pb3_from_pb4_pair(&q.f, &q.g).unwrap();
    let (b3, b4) = (bracket_sup(&f3, &g3, 256), bracket_sup(&q.f, &q.g, 256));
    // Scene order is (X0, X2, X1, X3); the pb3 triple is (X0 ∪ X1, X1 ∪ X2, X3).
    let union = |name: &str, a: usize, b: usize| NamedSet {
        name: name.into(),
        descriptor: PointSet::Union(vec![scene.sets[a].descriptor.clone(), scene.sets[b].descriptor.clone()]),
    };
    let mut pb3_scene = scene.clone();
    pb3_scene.sets = vec![union("X0+X1", 0, 2), union("X1+X2", 2, 1), scene.sets[3].clone()];
    pb3_scene.class = pbinv::certificates::ConstraintClass::new(pbinv::certificates::ClassKind::F3);
    let admissible = check_admissible(&f3, &g3, &pb3_scene).passed();
    out.push(check(
        "pb3_from_pb4_pair admissible and dominated",
        admissible && b3 <= b4 * (1.0 + 1e-6),
        format!("admissible {admissible}, {b3:.4} <= {b4:.4}"),
    ));

    let permuted = |order: [usize; 4]| {
        let mut s = scene.clone();
        s.sets = order.iter().map(|&i| scene.sets[i].clone()).collect();
        s
    };
    let one_minus_f = q.f.affine(-1.0, 1.0);
    let sym = check_admissible(&q.f, &q.g, &scene).passed()
        && check_admissible(&one_minus_f, &q.g, &permuted([1, 0, 2, 3])).passed()
        && check_admissible(&q.g, &q.f, &permuted([2, 3, 0, 1])).passed()
        && (bracket_sup(&one_minus_f, &q.g, 256) - b4).abs() <= 1e-12 * b4;
    out.push(check("F4 class symmetry bijections", sym, ""));

    let plane = Surface::plane([0.0, 1.0], [0.0, 1.0], 0.0).unwrap();
    let pq = poisson_bracket(
        &ScalarField::from_expr(&plane, "p").unwrap(),
        &ScalarField::from_expr(&plane, "q").unwrap(),
    )
    .unwrap()
    .value(Point::new(0.3, 0.6));
    out.push(check("{p,q} = -1", pq == -1.0, format!("{pq}")));

    let zero = estimate_pb(&discs_zero_scene(), &OptimizerConfig::default()).unwrap();
    out.push(check(
        "zero-scene optimizer <= 1e-3",
        zero.upper_bound <= 1e-3,
        format!("{:e}", zero.upper_bound),
    ));

    let mut rev = 0.0f64;
    for _ in 0..20 {
        let g = trig_field(&mut rng);
        let x = random_point(&mut rng);
        let fwd = hamiltonian_flow(&g, x, [0.0, 1.0], 1e-3).unwrap();
        let back = hamiltonian_flow(&g, fwd.end(), [1.0, 0.0], 1e-3).unwrap();
        rev = rev.max(torus.distance(back.end(), x));
    }
    out.push(check("integrator time reversal", rev <= 1e-8, format!("{rev:e}")));

    let quad = quadrilateral_pair(0.25, 1.0, 0.99, 0.01, &torus).unwrap();
    let mut drift = 0.0f64;
    for x in [Point::new(0.6, 0.3), Point::new(0.1, 0.45)] {
        let tr = hamiltonian_flow_controlled(&quad.g, x, [0.0, 1.0], 1e-3, 1e-9).unwrap();
        drift = drift.max(energy_drift(&tr, &quad.g));
    }
    out.push(check(
        "energy drift <= 1e-8 per unit time at step 1e-3 (quadrilateral hamiltonian)",
        drift <= 1e-8,
        format!("{drift:e}"),
    ));
    out
}

fn main() {
    let criteria: [(&str, fn() -> Vec<Check>); 9] = [
        ("quadrilateral exact value, A = 0.2", criterion_1),
        ("symmetric-case certificate, A = 0.5", criterion_2),
        ("sphere construction", criterion_3),
        ("bracket of x^2, y^2 on the sphere", criterion_4),
        ("chord duality, A = 0.25", criterion_5),
        ("flow-average bound", criterion_6),
        ("profile sandwich, A = 0.25", criterion_7),
        ("square-root profile rate on the sphere", criterion_8),
        ("property suites", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let checks = run();
        let bad: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
        let status = if bad.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} {status}: {name} ({}/{} checks, {:.1} s)",
            checks.len() - bad.len(),
            checks.len(),
            start.elapsed().as_secs_f64()
        );
        for c in &checks {
            println!("    [{}] {} {}", if c.passed { "ok" } else { "FAIL" }, c.label, c.detail);
        }
        if !bad.is_empty() {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
