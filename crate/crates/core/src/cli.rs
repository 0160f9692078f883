//! Command-line front end: argument parsing, run records and sidecar files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::certificates::{check_admissible, scene_lower_bound, stokes_lower_bound};
use crate::constructions::{
    enforce, flow_average_function_with, quadrilateral_pair, sphere_profile_pair, triangle_cutoff_map,
    FlowAverageOptions, Guarantee,
};
use crate::dynamics::{hamiltonian_flow, min_chord_time_with, ChordOptions};
use crate::error::{Error, Result};
use crate::fields::{poisson_bracket, sup_norm_with, ScalarField, SupOptions};
use crate::geometry::{PairSpec, Point, Scene, Surface};
use crate::optimizer::{estimate_pb, profile_curve, theoretical_profile_bounds, OptimizerConfig};
use crate::rng::stream_rng;
use crate::scenes::{builtin_scenes, load_scene, realize_pair, scene_hash, scene_to_string};
use crate::selftest::run_selftest;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SCENE: i32 = 3;
pub const EXIT_GUARANTEE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pbinv", version, about = "Poisson bracket invariants of sets on surfaces")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "PBINV_THREADS", global = true)]
    pub threads: Option<usize>,
    /// Directory for CSV and SVG sidecar files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List or dump the built-in scenes.
    Scenes {
        #[command(subcommand)]
        action: ScenesAction,
    },
    /// Sup-norm of the bracket of a scene pair.
    Bracket(PairArgs),
    /// Admissibility and Stokes lower bound for a scene pair.
    Certify(CertifyArgs),
    /// Build an explicit construction and re-measure its guarantees.
    Construct {
        #[command(subcommand)]
        what: ConstructCommand,
    },
    /// Upper bound on the scene's pb by optimization.
    Estimate(EstimateArgs),
    /// Upper estimates of the profile function of a scene pair.
    Profile(ProfileArgs),
    /// Minimal Hamiltonian chord between the first two sets of a scene.
    Chords(ChordsArgs),
    /// Run the invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Subcommand)]
pub enum ScenesAction {
    List,
    Dump {
        name: String,
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Built-in scene name or scene file.
    #[arg(long)]
    pub scene: String,
    /// Pair name (defaults to the scene's first pair).
    #[arg(long)]
    pub pair: Option<String>,
    /// Evaluation grid cells per axis.
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Certify on one named region only.
    #[arg(long)]
    pub region: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ConstructCommand {
    /// Quadrilateral pair with `‖{F,G}‖ ≤ γ²` on the unit-density torus of area B.
    QuadPair {
        #[arg(long)]
        area: f64,
        #[arg(long, default_value_t = 1.0)]
        total: f64,
        #[arg(long, default_value_t = 0.99)]
        beta: f64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 256)]
        grid: usize,
    },
    /// Sphere pair near (x², y²) with bracket at most 64ε².
    SpherePair {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 512)]
        grid: usize,
    },
    /// Triangle cutoff map; Jacobian checked at random points.
    CutoffMap {
        #[arg(long)]
        kappa: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Flow average of H along the flow of G on the unit torus.
    FlowAverage {
        #[arg(long)]
        h: String,
        #[arg(long)]
        g: String,
        #[arg(long)]
        b: f64,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 5e-3)]
        step: f64,
    },
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the record to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write an SVG convergence plot.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub scene: String,
    #[arg(long)]
    pub pair: Option<String>,
    /// Comma-separated values of s; defaults to evenly spaced values in [0, ‖{F,G}‖].
    #[arg(long, value_delimiter = ',')]
    pub s: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// pb value for the theoretical lower bound (defaults to the scene's expected value).
    #[arg(long)]
    pub p: Option<f64>,
    /// Iterations of the free search (0 disables it).
    #[arg(long, default_value_t = 0)]
    pub free_search: usize,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ChordsArgs {
    #[arg(long)]
    pub scene: String,
    /// `construction` for the scene's first factory pair, or a pair name.
    #[arg(long, default_value = "construction")]
    pub hamiltonian: String,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 64)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A number with its error budget.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Measured {
    pub value: f64,
    pub error: f64,
}

impl Measured {
    pub fn new(value: f64, error: f64) -> Self {
        Measured { value, error }
    }

    pub fn exact(value: f64) -> Self {
        Measured { value, error: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub config: Value,
    pub scene_hash: Option<String>,
    pub seed: Option<u64>,
    pub results: Value,
    pub sidecars: Vec<String>,
    pub wall_time_s: f64,
    pub version: String,
}

struct Output {
    config: Value,
    scene_hash: Option<String>,
    seed: Option<u64>,
    results: Value,
    sidecars: Vec<String>,
    /// Guarantees checked by the command; a failure maps to exit code 4.
    guarantees: Vec<Guarantee>,
}

impl Output {
    fn new(config: Value, results: Value) -> Self {
        Output {
            config,
            scene_hash: None,
            seed: None,
            results,
            sidecars: Vec::new(),
            guarantees: Vec::new(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Unknown(_) | Error::Expression(_) => EXIT_USAGE,
        Error::SceneValidation(_) | Error::InvalidSurface(_) | Error::InvalidRegion(_) => EXIT_SCENE,
        Error::Guarantee(_) => EXIT_GUARANTEE,
        _ => EXIT_FAILURE,
    }
}

/// Parse `args`, run, print the record; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        // A second initialization (tests) keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(&cli) {
        Ok((record, code)) => {
            if let Some(text) = record {
                println!("{text}");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Run a parsed command. Returns the printed text and the exit code.
pub fn dispatch(cli: &Cli) -> Result<(Option<String>, i32)> {
    let start = Instant::now();
    let (name, out) = match &cli.command {
        Command::Scenes { action } => return scenes(action).map(|t| (Some(t), 0)),
        Command::Bracket(a) => ("bracket", bracket(a)?),
        Command::Certify(a) => ("certify", certify(a)?),
        Command::Construct { what } => ("construct", construct(what)?),
        Command::Estimate(a) => ("estimate", estimate(a, &cli.out_dir)?),
        Command::Profile(a) => ("profile", profile(a, &cli.out_dir)?),
        Command::Chords(a) => ("chords", chords(a, &cli.out_dir)?),
        Command::Selftest(a) => ("selftest", selftest(a)?),
    };
    let record = RunRecord {
        command: name.into(),
        config: out.config,
        scene_hash: out.scene_hash,
        seed: out.seed,
        results: out.results,
        sidecars: out.sidecars,
        wall_time_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let text = serde_json::to_string_pretty(&record)?;
    if let Command::Estimate(EstimateArgs { out: Some(p), .. }) = &cli.command {
        std::fs::write(p, format!("{text}\n"))?;
    }
    let code = match enforce(&out.guarantees) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_GUARANTEE
        }
    };
    if name == "selftest" && code == 0 && record.results["failed"].as_u64().unwrap_or(0) > 0 {
        return Ok((Some(text), EXIT_FAILURE));
    }
    Ok((Some(text), code))
}

fn scenes(action: &ScenesAction) -> Result<String> {
    match action {
        ScenesAction::List => {
            let list: Vec<Value> = builtin_scenes()
                .into_iter()
                .map(|n| {
                    json!({
                        "name": n.scene.name,
                        "surface": n.scene.surface.kind().to_string(),
                        "class": n.scene.class.kind.to_string(),
                        "expected": n.scene.expected,
                        "anchor": n.anchor,
                        "hash": scene_hash(&n.scene).unwrap_or_default(),
                    })
                })
                .collect();
            Ok(serde_json::to_string_pretty(&list)?)
        }
        ScenesAction::Dump { name, out } => {
            let scene = load_scene(name)?;
            let text = scene_to_string(&scene)?;
            match out {
                Some(p) => {
                    std::fs::write(p, &text)?;
                    Ok(serde_json::to_string_pretty(&json!({ "written": p }))?)
                }
                None => Ok(text.trim_end().to_string()),
            }
        }
    }
}

fn scene_pair(scene: &Scene, pair: &Option<String>) -> Result<(String, ScalarField, ScalarField)> {
    let name = match pair {
        Some(p) => p.clone(),
        None => scene
            .pairs
            .first()
            .map(|p| p.name.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("scene {} has no pairs", scene.name)))?,
    };
    let (f, g) = realize_pair(scene, &name)?;
    Ok((name, f, g))
}

fn bracket(a: &PairArgs) -> Result<Output> {
    let scene = load_scene(&a.scene)?;
    let (name, f, g) = scene_pair(&scene, &a.pair)?;
    let r = sup_norm_with(&poisson_bracket(&f, &g)?, SupOptions { n: a.grid, refine_levels: 12 });
    let mut out = Output::new(
        json!({ "scene": scene.name, "pair": name, "grid": a.grid }),
        json!({
            "sup_norm": Measured::new(r.sup_norm, r.margin),
            "argmax": r.argmax,
            "exact": r.exact,
        }),
    );
    out.scene_hash = Some(scene_hash(&scene)?);
    Ok(out)
}

fn certify(a: &CertifyArgs) -> Result<Output> {
    let scene = load_scene(&a.pair.scene)?;
    let (name, f, g) = scene_pair(&scene, &a.pair.pair)?;
    let report = check_admissible(&f, &g, &scene);
    let cert = match &a.region {
        Some(r) => {
            if !report.passed() {
                return Err(Error::NotAdmissible(format!("pair {name} fails {:?}", report.worst())));
            }
            let region = scene
                .region(r)
                .ok_or_else(|| Error::Unknown(format!("scene {} has no region {r}", scene.name)))?;
            stokes_lower_bound(&f, &g, region)?
        }
        None => scene_lower_bound(&f, &g, &scene)?,
    };
    let mut out = Output::new(
        json!({ "scene": scene.name, "pair": name, "region": a.region }),
        json!({
            "certificate": Measured::new(cert.value, cert.error_budget),
            "region": cert.region,
            "boundary_integral": Measured::new(cert.boundary_integral, cert.error_budget),
            "area": Measured::exact(cert.area),
            "expected": scene.expected,
            "admissibility": report,
        }),
    );
    out.scene_hash = Some(scene_hash(&scene)?);
    Ok(out)
}

fn guarantee_json(gs: &[Guarantee]) -> Value {
    json!(gs
        .iter()
        .map(|g| json!({
            "quantity": g.quantity,
            "bound": g.bound,
            "measured": Measured::new(g.measured, (g.measured - g.bound).max(0.0)),
            "holds": g.holds,
        }))
        .collect::<Vec<_>>())
}

fn construct(what: &ConstructCommand) -> Result<Output> {
    match what {
        ConstructCommand::QuadPair {
            area,
            total,
            beta,
            delta,
            grid,
        } => {
            let surface = Surface::torus(*total)?;
            let q = quadrilateral_pair(*area, *total, *beta, *delta, &surface)?;
            let gs = q.verify(*grid)?;
            let mut out = Output::new(
                json!({ "construction": "quad-pair", "area": area, "total": total, "beta": beta, "delta": delta, "grid": grid }),
                json!({ "record": q.record(), "guarantees": guarantee_json(&gs) }),
            );
            out.guarantees = gs;
            Ok(out)
        }
        ConstructCommand::SpherePair { epsilon, grid } => {
            let p = sphere_profile_pair(*epsilon)?;
            let gs = p.verify(*grid)?;
            let mut out = Output::new(
                json!({ "construction": "sphere-pair", "epsilon": epsilon, "grid": grid }),
                json!({
                    "bracket_bound": p.bracket_bound,
                    "distance_bound": p.distance_bound,
                    "guarantees": guarantee_json(&gs),
                }),
            );
            out.guarantees = gs;
            Ok(out)
        }
        ConstructCommand::CutoffMap { kappa, samples, seed } => {
            use rand::Rng;
            let map = triangle_cutoff_map(*kappa)?;
            let mut rng = stream_rng(*seed, 0);
            let (mut det_max, mut outside) = (0.0f64, 0usize);
            for _ in 0..*samples {
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                let x = if s + t <= 1.0 { [s, t] } else { [1.0 - s, 1.0 - t] };
                det_max = det_max.max(map.jacobian_det(x).abs());
                if !map.in_target(map.eval(x), 1e-12) {
                    outside += 1;
                }
            }
            let gs = vec![
                Guarantee::new("jacobian determinant", 1.0 + kappa, det_max, 1e-12),
                Guarantee::new("points outside the target", 0.0, outside as f64, 0.0),
            ];
            let mut out = Output::new(
                json!({ "construction": "cutoff-map", "kappa": kappa, "samples": samples }),
                json!({
                    "kappa_effective": map.kappa_effective,
                    "delta": map.delta,
                    "det_bound": map.det_bound(),
                    "guarantees": guarantee_json(&gs),
                }),
            );
            out.seed = Some(*seed);
            out.guarantees = gs;
            Ok(out)
        }
        ConstructCommand::FlowAverage { h, g, b, grid, step } => {
            let s = Surface::unit_torus();
            let hf = ScalarField::from_expr(&s, h)?;
            let gf = ScalarField::from_expr(&s, g)?;
            let f = flow_average_function_with(&hf, &gf, *b, FlowAverageOptions { n: *grid, step: *step })?;
            let r = sup_norm_with(&poisson_bracket(&f, &gf)?, SupOptions { n: 2 * grid, refine_levels: 8 });
            let pts: Vec<f64> = (0..256 * 256)
                .map(|k| hf.value(Point::new((k % 256) as f64 / 256.0, (k / 256) as f64 / 256.0)))
                .collect();
            let osc = pts.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - pts.iter().cloned().fold(f64::INFINITY, f64::min);
            let gs = vec![Guarantee::new("sup |{F,G}|", osc / b, r.sup_norm, 1e-3)];
            let mut out = Output::new(
                json!({ "construction": "flow-average", "h": h, "g": g, "b": b, "grid": grid, "step": step }),
                json!({
                    "sup_norm": Measured::new(r.sup_norm, r.margin),
                    "oscillation_h": osc,
                    "guarantees": guarantee_json(&gs),
                }),
            );
            out.guarantees = gs;
            Ok(out)
        }
    }
}

fn sidecar_base(out_dir: &Path, hash: &str, seed: u64) -> PathBuf {
    out_dir.join(format!("{hash}-{seed}"))
}

fn write_sidecar(path: PathBuf, text: &str, list: &mut Vec<String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, text)?;
    list.push(path.display().to_string());
    Ok(())
}

fn estimate(a: &EstimateArgs, out_dir: &Path) -> Result<Output> {
    let scene = load_scene(&a.scene)?;
    let config = OptimizerConfig {
        grid: a.grid,
        restarts: a.restarts,
        iters: a.iters,
        levels: a.levels,
        seed: a.seed,
        ..OptimizerConfig::default()
    };
    let e = estimate_pb(&scene, &config)?;
    let hash = scene_hash(&scene)?;
    let mut sidecars = Vec::new();
    let base = sidecar_base(out_dir, &hash, a.seed);
    let mut csv = String::from("iteration,grid,temperature,current,best\n");
    for t in &e.trace {
        let _ = writeln!(csv, "{},{},{},{},{}", t.iteration, t.grid, t.temperature, t.current, t.best);
    }
    write_sidecar(base.with_extension("trace.csv"), &csv, &mut sidecars)?;
    if a.svg {
        let pts: Vec<(f64, f64)> = e.trace.iter().map(|t| (t.iteration as f64, t.best)).collect();
        let svg = svg_plot("best bracket sup", "iteration", "sup |{F,G}|", &[("best", pts)]);
        write_sidecar(base.with_extension("trace.svg"), &svg, &mut sidecars)?;
    }
    let cert = e.certificate.as_ref();
    let mut out = Output::new(
        json!({ "scene": scene.name, "optimizer": config }),
        json!({
            "upper_bound": Measured::new(e.upper_bound, e.upper_error),
            "certificate": cert.map(|c| Measured::new(c.value, c.error_budget)),
            "certificate_region": cert.map(|c| c.region.clone()),
            "gap": e.gap,
            "expected": scene.expected,
            "grid": e.grid,
            "best_restart": e.best_restart,
            "restarts": e.restarts,
            "admissible": e.admissibility.passed(),
        }),
    );
    out.scene_hash = Some(hash);
    out.seed = Some(a.seed);
    out.sidecars = sidecars;
    Ok(out)
}

fn profile(a: &ProfileArgs, out_dir: &Path) -> Result<Output> {
    let scene = load_scene(&a.scene)?;
    let (name, f, g) = scene_pair(&scene, &a.pair)?;
    let b = sup_norm_with(&poisson_bracket(&f, &g)?, SupOptions { n: 256, refine_levels: 8 }).sup_norm;
    let s_values: Vec<f64> = if a.s.is_empty() {
        let k = a.samples.max(2);
        (0..k).map(|i| b * i as f64 / (k - 1) as f64).collect()
    } else {
        a.s.clone()
    };
    let config = OptimizerConfig {
        grid: a.grid,
        seed: a.seed,
        free_search_iters: a.free_search,
        ..OptimizerConfig::default()
    };
    let curve = profile_curve(&f, &g, &s_values, &config)?;
    let p = a.p.or(scene.expected.pb);
    let mut rows = Vec::new();
    let mut csv = String::from("s,rho_upper,rho_error,bracket,method,lower,upper_formula\n");
    for e in &curve.points {
        let bounds = match p {
            Some(p) => Some(theoretical_profile_bounds(p, b, e.s, scene.class.kind)?),
            None => None,
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{:?},{},{}",
            e.s,
            e.rho_upper,
            e.rho_error,
            e.bracket,
            e.method,
            bounds.map_or(f64::NAN, |b| b.lower),
            bounds.map_or(f64::NAN, |b| b.upper)
        );
        rows.push(json!({
            "s": e.s,
            "rho_upper": Measured::new(e.rho_upper, e.rho_error),
            "bracket": Measured::new(e.bracket, e.rho_error),
            "method": e.method,
            "theory": bounds,
        }));
    }
    let hash = scene_hash(&scene)?;
    let mut sidecars = Vec::new();
    let base = sidecar_base(out_dir, &hash, a.seed);
    write_sidecar(base.with_extension("profile.csv"), &csv, &mut sidecars)?;
    if a.svg {
        let mut series = vec![(
            "rho_upper",
            curve.points.iter().map(|e| (e.s, e.rho_upper)).collect::<Vec<_>>(),
        )];
        if let Some(p) = p {
            let lower = curve
                .points
                .iter()
                .filter_map(|e| theoretical_profile_bounds(p, b, e.s, scene.class.kind).ok().map(|t| (e.s, t.lower)))
                .collect();
            series.push(("lower", lower));
        }
        let svg = svg_plot("profile", "s", "rho", &series);
        write_sidecar(base.with_extension("profile.svg"), &svg, &mut sidecars)?;
    }
    let mut out = Output::new(
        json!({ "scene": scene.name, "pair": name, "p": p, "optimizer": config }),
        json!({
            "bracket": Measured::new(b, 0.0),
            "points": rows,
            "lipschitz_constant": curve.lipschitz_constant,
            "lipschitz_diagnostics": curve.lipschitz_violations,
        }),
    );
    out.scene_hash = Some(hash);
    out.seed = Some(a.seed);
    out.sidecars = sidecars;
    Ok(out)
}

fn chords(a: &ChordsArgs, out_dir: &Path) -> Result<Output> {
    let scene = load_scene(&a.scene)?;
    if scene.sets.len() < 2 {
        return Err(Error::InvalidArgument("chords need at least two sets".into()));
    }
    let pair_name = if a.hamiltonian == "construction" {
        scene
            .pairs
            .iter()
            .find(|p| matches!(p.pair, PairSpec::Factory { .. }))
            .map(|p| p.name.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("scene {} has no construction pair", scene.name)))?
    } else {
        a.hamiltonian.clone()
    };
    let (f, g) = realize_pair(&scene, &pair_name)?;
    let opts = ChordOptions {
        horizon: a.horizon,
        seeds: a.seeds,
        tol: None,
        step: a.step,
    };
    let tol = opts.tol(&scene.surface);
    let (x0, x1) = (&scene.sets[0].descriptor, &scene.sets[1].descriptor);
    let chord = min_chord_time_with(&g, x0, x1, &opts);
    let cert = if scene.regions.is_empty() {
        None
    } else {
        scene_lower_bound(&f, &g, &scene).ok()
    };
    let sup = sup_norm_with(&poisson_bracket(&f, &g)?, SupOptions { n: 256, refine_levels: 8 });
    let hash = scene_hash(&scene)?;
    let mut sidecars = Vec::new();
    if let Some(c) = &chord {
        let tr = hamiltonian_flow(&g, c.start, [0.0, c.time], a.step.min(c.length / 16.0).max(1e-6))?;
        let mut csv = String::from("t,p,q,energy\n");
        for ((t, x), e) in tr.times.iter().zip(&tr.points).zip(&tr.energy) {
            let _ = writeln!(csv, "{t},{},{},{e}", x.p, x.q);
        }
        write_sidecar(sidecar_base(out_dir, &hash, 0).with_extension("chord.csv"), &csv, &mut sidecars)?;
    }
    let mut out = Output::new(
        json!({ "scene": scene.name, "hamiltonian": pair_name, "horizon": a.horizon, "seeds": a.seeds, "step": a.step }),
        json!({
            "sets": [scene.sets[0].name, scene.sets[1].name],
            "min_time": chord.map(|c| Measured::new(c.length, tol)),
            "chord": chord,
            "certificate": cert.as_ref().map(|c| Measured::new(c.value, c.error_budget)),
            "time_lower_bound": Measured::new(1.0 / sup.upper(), 0.0),
            "time_upper_bound": cert.as_ref().filter(|c| c.value > 0.0).map(|c| Measured::new(1.0 / c.value, c.error_budget / (c.value * c.value))),
        }),
    );
    out.scene_hash = Some(hash);
    out.sidecars = sidecars;
    Ok(out)
}

fn selftest(a: &SelftestArgs) -> Result<Output> {
    let checks = run_selftest(a.seed);
    let failed = checks.iter().filter(|c| !c.passed).count();
    let mut out = Output::new(
        json!({ "seed": a.seed }),
        json!({ "checks": checks, "passed": checks.len() - failed, "failed": failed }),
    );
    out.seed = Some(a.seed);
    Ok(out)
}

/// Line plot with linear axes.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let all = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m},{} L{},{} M{m},{} L{m},{m}" stroke="black" fill="none"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), h - m + 15.0, "middle"),
        (x1, sx(x1), h - m + 15.0, "middle"),
        (y0, m - 5.0, sy(y0), "end"),
        (y1, m - 5.0, sy(y1), "end"),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let d: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .enumerate()
            .map(|(k, &(x, y))| format!("{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" stroke="{c}" fill="none" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{c}">{name}</text>"#,
            w - m - 80.0,
            m + 15.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}
