//! Built-in scenes, the scene file format and pair realization.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::certificates::{Affine, ClassKind, ConstraintClass, Omega};
use crate::constructions::{quadrilateral_pair, smoother, smoother_deriv, sphere_profile_pair};
use crate::decimal::Real;
use crate::error::{Error, Result};
use crate::fields::{Jet, ScalarField};
use crate::geometry::{
    Ambient, Expected, ExpectedStatus, NamedPair, NamedRegion, NamedSet, PairSpec, Point, PointSet,
    Region, Scene, Surface,
};

/// A shipped scene with a short description of where its numbers come from.
#[derive(Clone, Debug, Serialize)]
pub struct NamedScene {
    pub scene: Scene,
    pub anchor: String,
}

/// Areas of the torus quadrilateral scenes.
pub const QUAD_AREAS: [f64; 4] = [0.1, 0.2, 0.25, 0.5];

pub fn quad_scene_name(a: f64) -> String {
    format!("torus-quad-A{a}")
}

fn params(kv: &[(&str, f64)]) -> BTreeMap<String, Real> {
    kv.iter().map(|(k, v)| (k.to_string(), Real(*v))).collect()
}

fn named_set(name: &str, descriptor: PointSet) -> NamedSet {
    NamedSet {
        name: name.into(),
        descriptor,
    }
}

/// Torus of area 1 with `Π = [0, √A]²`; sets ordered `(a₁, a₃, a₂, a₄)`.
pub fn torus_quad_scene(a: f64) -> Scene {
    let s = Surface::unit_torus();
    let al = a.sqrt();
    let c = [
        Point::new(0.0, 0.0),
        Point::new(al, 0.0),
        Point::new(al, al),
        Point::new(0.0, al),
    ];
    let quad = Region::rectangle([0.0, al], [0.0, al]);
    Scene {
        name: quad_scene_name(a),
        surface: s,
        sets: vec![
            named_set("a1", PointSet::segment(c[0], c[3])),
            named_set("a3", PointSet::segment(c[1], c[2])),
            named_set("a2", PointSet::segment(c[0], c[1])),
            named_set("a4", PointSet::segment(c[3], c[2])),
        ],
        class: ConstraintClass::new(ClassKind::F4).with_op_radius(1.0 / 1024.0),
        regions: vec![
            NamedRegion {
                name: "quad".into(),
                region: quad.clone(),
            },
            NamedRegion {
                name: "complement".into(),
                region: Region::complement(quad),
            },
        ],
        pairs: vec![NamedPair {
            name: "quad-construction".into(),
            pair: PairSpec::Factory {
                name: "quadrilateral-pair".into(),
                params: params(&[("A", a), ("B", 1.0), ("beta", 0.99), ("delta", 0.01)]),
            },
        }],
        expected: Expected {
            pb: Some((1.0 / a).max(1.0 / (1.0 - a))),
            status: ExpectedStatus::Exact,
            source: "closed form max(1/A, 1/(B-A)) for quadrilaterals on surfaces".into(),
        },
        resolution: None,
        safety_margin: None,
    }
}

pub fn sphere_great_circles_scene() -> Scene {
    Scene {
        name: "sphere-three-great-circles".into(),
        surface: Surface::round_sphere(),
        sets: vec![
            named_set("x=0", PointSet::GreatCircle { axis: Ambient::X }),
            named_set("y=0", PointSet::GreatCircle { axis: Ambient::Y }),
            named_set("z=0", PointSet::GreatCircle { axis: Ambient::Z }),
        ],
        class: ConstraintClass::new(ClassKind::F3),
        regions: Vec::new(),
        pairs: Vec::new(),
        expected: Expected {
            pb: None,
            status: ExpectedStatus::PositiveUnknown,
            source: "positive by a quasi-state argument; value unknown, regression only".into(),
        },
        resolution: None,
        safety_margin: None,
    }
}

pub fn discs_zero_scene() -> Scene {
    let disc = |p, q| PointSet::Disc {
        center: Point::new(p, q),
        radius: 0.05,
    };
    Scene {
        name: "discs-pb3-zero".into(),
        surface: Surface::unit_torus(),
        sets: vec![
            named_set("X", disc(0.2, 0.2)),
            named_set("Y", disc(0.7, 0.2)),
            named_set("Z", disc(0.45, 0.7)),
        ],
        class: ConstraintClass::new(ClassKind::F3),
        regions: Vec::new(),
        pairs: vec![NamedPair {
            name: "commuting".into(),
            pair: PairSpec::Factory {
                name: "bump-pair".into(),
                params: params(&[
                    ("center_p", 0.45),
                    ("center_q", 0.7),
                    ("r_in", 0.1),
                    ("r_out", 0.2),
                ]),
            },
        }],
        expected: Expected {
            pb: Some(0.0),
            status: ExpectedStatus::Exact,
            source: "a commuting admissible pair exists".into(),
        },
        resolution: None,
        safety_margin: None,
    }
}

/// `(x², y²)` on the round sphere, with sets where they take the values 0, 1.
pub fn sphere_profile_scene() -> Scene {
    let pts = |a: f64, b: f64| {
        PointSet::Union(vec![
            PointSet::Polyline {
                points: vec![Point::new(0.0, a)],
                closed: false,
            },
            PointSet::Polyline {
                points: vec![Point::new(0.0, b)],
                closed: false,
            },
        ])
    };
    Scene {
        name: "sphere-x2-y2-profile".into(),
        surface: Surface::round_sphere(),
        sets: vec![
            named_set("x=0", PointSet::GreatCircle { axis: Ambient::X }),
            named_set("x=±1", pts(0.0, PI)),
            named_set("y=0", PointSet::GreatCircle { axis: Ambient::Y }),
            named_set("y=±1", pts(0.5 * PI, 1.5 * PI)),
        ],
        class: ConstraintClass::new(ClassKind::F4),
        regions: Vec::new(),
        pairs: vec![
            NamedPair {
                name: "x2-y2".into(),
                pair: PairSpec::Expressions {
                    f: "x^2".into(),
                    g: "y^2".into(),
                },
            },
            NamedPair {
                name: "sphere-construction".into(),
                pair: PairSpec::Factory {
                    name: "sphere-profile-pair".into(),
                    params: params(&[("epsilon", 0.05)]),
                },
            },
        ],
        expected: Expected {
            pb: None,
            status: ExpectedStatus::RegressionOnly,
            source: "profile scene: rho(s) <= 1/2 - sqrt(s)/8 along the sphere construction".into(),
        },
        resolution: None,
        safety_margin: None,
    }
}

/// Edges `a_i ≥ 0` of a regular `n`-gon with the given circumradius,
/// centred at the origin of the value plane.
pub fn regular_polygon(n: usize, circumradius: f64) -> Vec<Affine> {
    let apothem = circumradius * (PI / n as f64).cos();
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            Affine::new(-t.cos(), -t.sin(), apothem)
        })
        .collect()
}

/// Pentagon of segments on the torus with a pentagon constraint polygon and
/// `Ω` a disc of twice the circumradius.
pub fn pentagon_scene() -> Scene {
    let n = 5;
    let (cp, cq, r) = (0.5, 0.5, 0.3);
    let vertex = |i: usize| {
        let t = 2.0 * PI * i as f64 / n as f64;
        Point::new(cp + r * t.cos(), cq + r * t.sin())
    };
    let sets = (0..n)
        .map(|i| named_set(&format!("e{}", i + 1), PointSet::segment(vertex(i), vertex(i + 1))))
        .collect();
    let class = ConstraintClass::polygon_class(
        regular_polygon(n, 1.0),
        Omega::Disc {
            center: Point::new(0.0, 0.0),
            radius: 2.0,
        },
    )
    .expect("pentagon satisfies the vertex condition");
    Scene {
        name: "pentagon-pb5".into(),
        surface: Surface::unit_torus(),
        sets,
        class,
        regions: Vec::new(),
        pairs: vec![NamedPair {
            name: "radial".into(),
            pair: PairSpec::Factory {
                name: "radial-pair".into(),
                params: params(&[
                    ("center_p", cp),
                    ("center_q", cq),
                    ("scale", 4.5),
                    ("r_in", 0.32),
                    ("r_out", 0.42),
                ]),
            },
        }],
        expected: Expected {
            pb: None,
            status: ExpectedStatus::RegressionOnly,
            source: "plumbing scene without a known value".into(),
        },
        resolution: None,
        safety_margin: None,
    }
}

pub fn builtin_scenes() -> Vec<NamedScene> {
    let mut out = vec![NamedScene {
        scene: sphere_great_circles_scene(),
        anchor: "three great circles on the round sphere".into(),
    }];
    for a in QUAD_AREAS {
        out.push(NamedScene {
            scene: torus_quad_scene(a),
            anchor: format!("quadrilateral of area {a} on the torus of area 1"),
        });
    }
    out.push(NamedScene {
        scene: discs_zero_scene(),
        anchor: "three disjoint discs".into(),
    });
    out.push(NamedScene {
        scene: sphere_profile_scene(),
        anchor: "profile of (x^2, y^2) on the sphere".into(),
    });
    out.push(NamedScene {
        scene: pentagon_scene(),
        anchor: "pentagon constraint polygon".into(),
    });
    out
}

pub fn builtin_scene(name: &str) -> Option<Scene> {
    builtin_scenes().into_iter().map(|n| n.scene).find(|s| s.name == name)
}

/// Canonical pretty JSON text of a scene (trailing newline included).
pub fn scene_to_string(scene: &Scene) -> Result<String> {
    let mut s = serde_json::to_string_pretty(scene)?;
    s.push('\n');
    Ok(s)
}

pub fn scene_from_str(text: &str) -> Result<Scene> {
    let scene: Scene = serde_json::from_str(text)
        .map_err(|e| Error::SceneValidation(format!("bad scene file: {e}")))?;
    scene.validate()?;
    Ok(scene)
}

/// A built-in scene name or a path to a scene file.
pub fn load_scene(name_or_path: &str) -> Result<Scene> {
    if let Some(s) = builtin_scene(name_or_path) {
        return Ok(s);
    }
    let p = Path::new(name_or_path);
    if p.exists() {
        return scene_from_str(&std::fs::read_to_string(p)?);
    }
    Err(Error::Unknown(format!("no built-in scene or file named {name_or_path}")))
}

/// First 16 hex digits of the SHA-256 of the canonical scene text.
pub fn scene_hash(scene: &Scene) -> Result<String> {
    let digest = Sha256::digest(scene_to_string(scene)?.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn param(params: &BTreeMap<String, Real>, key: &str) -> Result<f64> {
    params
        .get(key)
        .map(|r| r.0)
        .ok_or_else(|| Error::InvalidArgument(format!("missing factory parameter {key}")))
}

/// Smooth radial cutoff: 1 inside `r_in`, 0 outside `r_out`.
fn radial_cutoff(surface: &Surface, center: Point, r_in: f64, r_out: f64) -> impl Fn(Point) -> Jet + Clone {
    let s = surface.clone();
    move |x| {
        let d = s.delta(center, x);
        let r = d[0].hypot(d[1]);
        if r <= r_in {
            return Jet::constant(1.0);
        }
        if r >= r_out {
            return Jet::constant(0.0);
        }
        let w = r_out - r_in;
        let t = (r - r_in) / w;
        let dr = -smoother_deriv(t) / w;
        Jet::new(1.0 - smoother(t), dr * d[0] / r, dr * d[1] / r)
    }
}

/// Evaluate a named pair of a scene.
pub fn realize_pair(scene: &Scene, name: &str) -> Result<(ScalarField, ScalarField)> {
    let spec = scene
        .pair(name)
        .ok_or_else(|| Error::Unknown(format!("scene {} has no pair {name}", scene.name)))?;
    realize_pair_spec(scene, spec)
}

pub fn realize_pair_spec(scene: &Scene, spec: &PairSpec) -> Result<(ScalarField, ScalarField)> {
    let s = &scene.surface;
    match spec {
        PairSpec::Expressions { f, g } => Ok((ScalarField::from_expr(s, f)?, ScalarField::from_expr(s, g)?)),
        PairSpec::Factory { name, params } => match name.as_str() {
            "quadrilateral-pair" => {
                let q = quadrilateral_pair(
                    param(params, "A")?,
                    param(params, "B")?,
                    param(params, "beta")?,
                    param(params, "delta")?,
                    s,
                )?;
                Ok((q.f, q.g))
            }
            "sphere-profile-pair" => {
                if s.kind() != crate::geometry::SurfaceKind::RoundSphere {
                    return Err(Error::InvalidArgument("sphere-profile-pair needs the round sphere".into()));
                }
                let p = sphere_profile_pair(param(params, "epsilon")?)?;
                Ok((p.f, p.g))
            }
            "bump-pair" => {
                let c = Point::new(param(params, "center_p")?, param(params, "center_q")?);
                let bump = radial_cutoff(s, c, param(params, "r_in")?, param(params, "r_out")?);
                Ok((ScalarField::analytic(s, bump), ScalarField::constant(s, 0.0)))
            }
            "radial-pair" => {
                let c = Point::new(param(params, "center_p")?, param(params, "center_q")?);
                let k = param(params, "scale")?;
                let cut = radial_cutoff(s, c, param(params, "r_in")?, param(params, "r_out")?);
                let build = |axis: usize| {
                    let (cut, s2) = (cut.clone(), s.clone());
                    ScalarField::analytic(s, move |x| {
                        let d = s2.delta(c, x);
                        let lin = if axis == 0 {
                            Jet::new(k * d[0], k, 0.0)
                        } else {
                            Jet::new(k * d[1], 0.0, k)
                        };
                        lin * cut(x)
                    })
                };
                Ok((build(0), build(1)))
            }
            other => Err(Error::Unknown(format!("no pair factory named {other}"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::check_admissible;

    #[test]
    fn builtins_validate_and_round_trip() {
        for n in builtin_scenes() {
            n.scene.validate().unwrap_or_else(|e| panic!("{}: {e}", n.scene.name));
            let a = scene_to_string(&n.scene).unwrap();
            let back = scene_from_str(&a).unwrap();
            assert_eq!(back, n.scene);
            assert_eq!(scene_to_string(&back).unwrap(), a, "{}", n.scene.name);
        }
    }

    #[test]
    fn expected_values() {
        let q = builtin_scene("torus-quad-A0.2").unwrap();
        assert!((q.expected.pb.unwrap() - 5.0).abs() < 1e-12);
        let d = builtin_scene("discs-pb3-zero").unwrap();
        assert_eq!(d.expected.pb, Some(0.0));
        let s = builtin_scene("sphere-three-great-circles").unwrap();
        assert_eq!(s.expected.status, ExpectedStatus::PositiveUnknown);
        assert!(s.expected.pb.is_none());
    }

    #[test]
    fn shipped_pairs_are_admissible() {
        for name in ["torus-quad-A0.2", "torus-quad-A0.5", "discs-pb3-zero", "pentagon-pb5"] {
            let sc = builtin_scene(name).unwrap();
            let (f, g) = realize_pair(&sc, &sc.pairs[0].name).unwrap();
            let r = check_admissible(&f, &g, &sc);
            assert!(r.passed(), "{name}: {:?}", r.worst());
        }
        let sc = builtin_scene("sphere-x2-y2-profile").unwrap();
        let (f, g) = realize_pair(&sc, "x2-y2").unwrap();
        assert!(check_admissible(&f, &g, &sc).passed());
    }

    #[test]
    fn hash_is_stable_and_distinct() {
        let a = scene_hash(&torus_quad_scene(0.2)).unwrap();
        assert_eq!(a, scene_hash(&torus_quad_scene(0.2)).unwrap());
        assert_ne!(a, scene_hash(&torus_quad_scene(0.25)).unwrap());
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn unknown_names() {
        assert!(load_scene("no-such-scene").is_err());
        let sc = discs_zero_scene();
        assert!(realize_pair(&sc, "missing").is_err());
    }
}
