use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pbinv(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbinv"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env("PBINV_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn scenes_list_and_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let list = pbinv(&["scenes", "list"], dir.path());
    assert!(list.status.success());
    let names: Vec<String> = json(&list)
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap().to_string())
        .collect();
    for n in ["torus-quad-A0.2", "torus-quad-A0.5", "discs-pb3-zero", "sphere-three-great-circles"] {
        assert!(names.iter().any(|m| m == n), "{n} missing from {names:?}");
    }

    let file = dir.path().join("quad.json");
    let dump = pbinv(&["scenes", "dump", "torus-quad-A0.2", "--out", file.to_str().unwrap()], dir.path());
    assert!(dump.status.success());
    let by_name = json(&pbinv(&["bracket", "--scene", "torus-quad-A0.2"], dir.path()));
    let by_file = json(&pbinv(&["bracket", "--scene", file.to_str().unwrap()], dir.path()));
    assert_eq!(by_name["scene_hash"], by_file["scene_hash"]);
    assert_eq!(by_name["results"]["sup_norm"], by_file["results"]["sup_norm"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pbinv(&["bracket"], dir.path()).status.code(), Some(2));
    assert_eq!(pbinv(&["bracket", "--scene", "nope"], dir.path()).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": \"bad\"}").unwrap();
    assert_eq!(pbinv(&["bracket", "--scene", bad.to_str().unwrap()], dir.path()).status.code(), Some(3));

    // A 6² grid is too coarse for the averaged field to meet 1/b.
    let fa = pbinv(
        &[
            "construct", "flow-average", "--h", "0.5+0.5*sin(2*pi*q)", "--g", "sin(2*pi*p)/(2*pi)", "--b", "1", "--grid", "6",
        ],
        dir.path(),
    );
    assert_eq!(fa.status.code(), Some(4));
    assert_eq!(json(&fa)["results"]["guarantees"][0]["holds"], false);
}

#[test]
fn certify_reports_the_quadrilateral_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = pbinv(&["certify", "--scene", "torus-quad-A0.2", "--pair", "quad-construction"], dir.path());
    assert!(out.status.success());
    let r = json(&out);
    let v = r["results"]["certificate"]["value"].as_f64().unwrap();
    assert!((v - 5.0).abs() < 0.05, "{v}");
    assert!(r["results"]["certificate"]["error"].as_f64().unwrap() >= 0.0);
}

#[test]
fn estimate_is_reproducible_and_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("run.json");
    let args = [
        "estimate", "--scene", "discs-pb3-zero", "--grid", "32", "--restarts", "2", "--iters", "300", "--levels", "2",
        "--seed", "7", "--svg",
    ];
    let mut with_out: Vec<&str> = args.to_vec();
    with_out.extend(["--out", record.to_str().unwrap()]);
    let a = json(&pbinv(&with_out, dir.path()));
    let b = json(&pbinv(&args, dir.path()));
    assert_eq!(a["results"], b["results"]);
    assert!(a["results"]["upper_bound"]["value"].as_f64().unwrap() <= 1e-3);

    let hash = a["scene_hash"].as_str().unwrap();
    let sidecars: Vec<&str> = a["sidecars"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(sidecars.len(), 2);
    for s in &sidecars {
        let name = Path::new(s).file_name().unwrap().to_str().unwrap();
        assert!(name.starts_with(&format!("{hash}-7.")), "{name}");
        assert!(Path::new(s).exists());
    }
    let csv = std::fs::read_to_string(sidecars[0]).unwrap();
    assert!(csv.starts_with("iteration,grid,temperature,current,best"));
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&record).unwrap()).unwrap();
    assert_eq!(saved["results"], a["results"]);
    assert_eq!(saved["command"], "estimate");
}

#[test]
fn chords_and_profile_records() {
    let dir = tempfile::tempdir().unwrap();
    let c = json(&pbinv(&["chords", "--scene", "torus-quad-A0.25"], dir.path()));
    let t = c["results"]["min_time"]["value"].as_f64().unwrap();
    assert!((0.23..=0.25).contains(&t), "{t}");

    let p = json(&pbinv(
        &["profile", "--scene", "torus-quad-A0.25", "--pair", "quad-construction", "--s", "0,1,2"],
        dir.path(),
    ));
    let pts = p["results"]["points"].as_array().unwrap();
    assert_eq!(pts.len(), 3);
    assert!((pts[0]["rho_upper"]["value"].as_f64().unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn selftest_fails_only_on_the_slope_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = pbinv(&["selftest"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let r = json(&out);
    let failed: Vec<&str> = r["results"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["smooth step slope at most 1+2δ"]);
}
