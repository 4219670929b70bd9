//! Command-line front door: plan trajectories, map uncertainty grids, run
//! closed-loop simulations, and evaluate uncertainty along trajectories.
//!
//! Every command writes its outputs as plain CSV/JSON plus a run manifest
//! with the resolved inputs, configuration, seed, and tool version. Exit
//! codes: 0 success, 1 usage or parse failure, 2 domain failure (infeasible
//! plan, missed gate), 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::{
    fim_full, neg_log_det_floored, pnp_uncertainty_oracle, CameraModel, CameraPose,
    CovarianceMode,
};
use crate::mpctc::{self, ControllerKind, ReferenceTrajectory, ScenarioConfig};
use crate::nlp::SolverConfig;
use crate::objectives::PerceptionWeights;
use crate::polytraj::{self, PlanMode, TogtOptions};
use crate::quad::QuadParams;
use crate::shooting::{self, CostConfig, CostToggles};
use crate::track::{self, Landmark, Track};
use crate::trajectory::DiscreteTrajectory;
use crate::{Error, Result};

/// Environment variable holding an alternate root for config-file lookups.
pub const CONFIG_ROOT_ENV: &str = "RACELINE_CONFIG_ROOT";

const USAGE: &str = "\
raceline <command> [flags]

commands:
  plan      --track FILE [--mode togt|towp] [--perception none|la|fov|pum|combos]
            [--mp N] [--dtbar SEC] [--quad FILE] [--camera FILE] [--weights FILE]
            [--out DIR] [--seed N]
  umap      --scene FILE [--camera FILE] [--metric fast|full|oracle]
            [--xmin X --xmax X --ymin Y --ymax Y --nx N --ny N --z Z]
            [--lambda L] [--trials N] [--threads N] [--out DIR] [--seed N]
  simulate  --trajectory FILE [--scenario FILE] [--quad FILE] [--track FILE]
            [--controller contouring|naive] [--out DIR] [--seed N]
  evaluate  --trajectory FILE --scene FILE [--camera FILE] [--interval SEC]
            [--threshold M] [--increment M] [--out DIR]
";

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    match dispatch(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::EmptyGate(_) => 1,
                Error::NumericalFailure(_) | Error::InvalidState(_) => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(args: &[String]) -> Result<i32> {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return Ok(1);
    };
    let flags = Flags::parse(&args[1..])?;
    match command.as_str() {
        "plan" => cmd_plan(&flags),
        "umap" => cmd_umap(&flags),
        "simulate" => cmd_simulate(&flags),
        "evaluate" => cmd_evaluate(&flags),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(0)
        }
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            Ok(1)
        }
    }
}

/// Minimal `--key value` flag store.
struct Flags {
    values: BTreeMap<String, String>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Parse(format!("expected --flag, got '{arg}'")))?;
            if let Some((k, v)) = key.split_once('=') {
                values.insert(k.to_string(), v.to_string());
            } else {
                let value = it
                    .next()
                    .ok_or_else(|| Error::Parse(format!("flag --{key} needs a value")))?;
                values.insert(key.to_string(), value.clone());
            }
        }
        Ok(Self { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(resolve_path)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("flag --{key}: invalid number '{v}'"))),
            None => Ok(default),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("flag --{key}: invalid integer '{v}'"))),
            None => Ok(default),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("flag --{key}: invalid integer '{v}'"))),
            None => Ok(default),
        }
    }

    fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out").unwrap_or("out"))
    }
}

/// Resolve a config path: as given if it exists, otherwise under the config
/// root from the environment.
fn resolve_path(p: &str) -> PathBuf {
    let direct = PathBuf::from(p);
    if direct.exists() {
        return direct;
    }
    if let Ok(root) = std::env::var(CONFIG_ROOT_ENV) {
        let alt = Path::new(&root).join(p);
        if alt.exists() {
            return alt;
        }
    }
    direct
}

/// Reproducibility record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    fn new(command: &str, flags: &Flags, seed: u64) -> Self {
        let inputs = flags
            .values
            .iter()
            .filter(|(k, _)| {
                matches!(
                    k.as_str(),
                    "track" | "quad" | "camera" | "weights" | "scenario" | "scene"
                        | "trajectory" | "solver"
                )
            })
            .map(|(k, v)| (k.clone(), resolve_path(v).display().to_string()))
            .collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs,
            flags: flags.values.clone(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn load_quad(flags: &Flags) -> Result<QuadParams> {
    match flags.path("quad") {
        Some(p) => QuadParams::from_json_file(&p),
        None => Ok(QuadParams::default()),
    }
}

fn load_camera(flags: &Flags) -> Result<CameraModel> {
    match flags.path("camera") {
        Some(p) => CameraModel::from_json_file(&p),
        None => Ok(CameraModel::default()),
    }
}

fn load_weights(flags: &Flags) -> Result<PerceptionWeights> {
    match flags.path("weights") {
        Some(p) => PerceptionWeights::from_json_file(&p),
        None => Ok(PerceptionWeights::default()),
    }
}

fn load_solver(flags: &Flags) -> Result<SolverConfig> {
    match flags.path("solver") {
        Some(p) => SolverConfig::from_json_file(&p),
        None => Ok(shooting::default_solver_config()),
    }
}

fn parse_perception(spec: &str) -> Result<CostToggles> {
    let mut toggles = CostToggles::none();
    if spec == "none" {
        return Ok(toggles);
    }
    for token in spec.split(['-', ',', '+']) {
        match token {
            "la" => toggles.la = true,
            "fov" => toggles.fov = true,
            "pum" => toggles.pum = true,
            "mr" => toggles.mr = true,
            other => {
                return Err(Error::Parse(format!(
                    "unknown perception token '{other}' (expected la, fov, pum, mr)"
                )))
            }
        }
    }
    // jerk regulation accompanies every perception-aware plan
    if toggles.la || toggles.fov || toggles.pum {
        toggles.mr = true;
    }
    Ok(toggles)
}

/// Stage-wise planning report.
#[derive(Debug, Serialize)]
pub struct PlanReport {
    pub mode: String,
    pub perception: String,
    pub stage1_duration: f64,
    pub stage2_duration: f64,
    pub stage3_duration: f64,
    pub stage2_feasibility: polytraj::FeasibilityReport,
    pub shooting: shooting::ShootingReport,
    pub nodes: usize,
}

fn cmd_plan(flags: &Flags) -> Result<i32> {
    let seed = flags.u64_or("seed", 0)?;
    let out = flags.out_dir();
    std::fs::create_dir_all(&out)?;

    let params = load_quad(flags)?;
    let track_path = flags
        .path("track")
        .ok_or_else(|| Error::Parse("missing required flag --track".into()))?;
    let track = track::load_track(&track_path, &params)?;
    let weights = load_weights(flags)?;
    let camera = load_camera(flags)?;
    let solver = load_solver(flags)?;

    let mode = match flags.get("mode").unwrap_or("togt") {
        "togt" => PlanMode::Gate,
        "towp" => PlanMode::Waypoint,
        other => return Err(Error::Parse(format!("unknown mode '{other}'"))),
    };
    let toggles = parse_perception(flags.get("perception").unwrap_or("none"))?;
    let mp = flags.usize_or("mp", 1)?;
    let dt_bar = flags.f64_or("dtbar", 0.04)?;

    let options = TogtOptions { mode, ..Default::default() };
    let stage1 = polytraj::optimize_togt(&track, &params, &options)?;
    let stage2 = polytraj::subdivide_and_refine(&stage1, &track, &params, mp, &options)?;
    let warm = polytraj::sample_discrete(&stage2, &params, dt_bar)?;

    let costs = CostConfig {
        toggles: toggles.clone(),
        weights: weights.clone(),
        camera: if toggles.any() { Some(camera) } else { None },
    };
    let problem = shooting::transcribe(&warm, &track, &params, costs, dt_bar)?;
    let (refined, report) = shooting::solve(&problem, &solver)?;

    refined.write_csv(&out.join("trajectory.csv"))?;
    std::fs::write(out.join("stage2_coefficients.json"), stage2.trajectory.to_json()?)?;
    let plan_report = PlanReport {
        mode: format!("{mode:?}"),
        perception: flags.get("perception").unwrap_or("none").to_string(),
        stage1_duration: stage1.duration(),
        stage2_duration: stage2.duration(),
        stage3_duration: report.duration,
        stage2_feasibility: stage2.feasibility.clone(),
        nodes: refined.nodes.len(),
        shooting: report,
    };
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&plan_report)?)?;
    RunManifest::new("plan", flags, seed).write(&out)?;

    println!(
        "plan: stage1 {:.3} s, stage2 {:.3} s, stage3 {:.3} s ({} nodes), status {:?}",
        plan_report.stage1_duration,
        plan_report.stage2_duration,
        plan_report.stage3_duration,
        plan_report.nodes,
        plan_report.shooting.solve.status
    );
    let ok = matches!(
        plan_report.shooting.solve.status,
        crate::nlp::SolveStatus::Converged | crate::nlp::SolveStatus::MaxIterations
    ) && plan_report.shooting.max_defect < 1e-4;
    Ok(if ok { 0 } else { 2 })
}

/// Scene description: either a full track file or a bare landmark list
/// (`{"landmarks": [{"center": [...], "facing": [...], "size": 1.45}]}`).
pub fn load_scene(path: &Path, params: &QuadParams) -> Result<Vec<Landmark>> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(track) = track::parse_track(&text, params) {
        return Ok(track.landmarks);
    }
    #[derive(serde::Deserialize)]
    struct SceneFile {
        landmarks: Vec<SceneLandmark>,
    }
    #[derive(serde::Deserialize)]
    struct SceneLandmark {
        center: [f64; 3],
        facing: [f64; 3],
        #[serde(default = "default_size")]
        size: f64,
    }
    fn default_size() -> f64 {
        1.45
    }
    let scene: SceneFile = serde_json::from_str(&text)?;
    scene
        .landmarks
        .iter()
        .map(|lm| {
            let center = Vector3::from(lm.center);
            let facing = Vector3::from(lm.facing);
            let corners = crate::track::PolyhedralGate::square_corners(
                &center,
                &facing,
                &Vector3::z(),
                lm.size,
            )?;
            Landmark::new(center, facing, lm.size, corners.to_vec())
        })
        .collect()
}

fn cmd_umap(flags: &Flags) -> Result<i32> {
    let seed = flags.u64_or("seed", 0)?;
    let out = flags.out_dir();
    std::fs::create_dir_all(&out)?;

    let params = load_quad(flags)?;
    let scene_path = flags
        .path("scene")
        .ok_or_else(|| Error::Parse("missing required flag --scene".into()))?;
    let landmarks = load_scene(&scene_path, &params)?;
    let camera = load_camera(flags)?;
    let metric = flags.get("metric").unwrap_or("fast").to_string();
    let lambda = flags.f64_or("lambda", 10.0)?;
    let trials = flags.usize_or("trials", 60)?;
    let (xmin, xmax) = (flags.f64_or("xmin", -2.0)?, flags.f64_or("xmax", 3.0)?);
    let (ymin, ymax) = (flags.f64_or("ymin", -4.0)?, flags.f64_or("ymax", 5.0)?);
    let (nx, ny) = (flags.usize_or("nx", 50)?, flags.usize_or("ny", 50)?);
    let z = flags.f64_or("z", 1.5)?;
    if nx < 2 || ny < 2 {
        return Err(Error::Parse("grid needs at least 2x2 cells".into()));
    }
    if let Some(threads) = flags.get("threads") {
        let threads: usize = threads
            .parse()
            .map_err(|_| Error::Parse("flag --threads: invalid integer".into()))?;
        // failure just means a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    let cells: Vec<(usize, usize)> =
        (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|(i, j)| {
            let x = xmin + (xmax - xmin) * *i as f64 / (nx - 1) as f64;
            let y = ymin + (ymax - ymin) * *j as f64 / (ny - 1) as f64;
            let pose = CameraPose::looking_along_x(Vector3::new(x, y, z));
            grid_metric(&metric, &camera, &pose, &landmarks, lambda, trials, seed)
        })
        .collect();

    let mut csv = String::from("# schema: raceline-umap-v1\nx,y,metric\n");
    for (c, v) in cells.iter().zip(values.iter()) {
        let x = xmin + (xmax - xmin) * c.0 as f64 / (nx - 1) as f64;
        let y = ymin + (ymax - ymin) * c.1 as f64 / (ny - 1) as f64;
        csv.push_str(&format!("{x:.6},{y:.6},{v:.9}\n"));
    }
    std::fs::write(out.join("umap.csv"), csv)?;
    RunManifest::new("umap", flags, seed).write(&out)?;
    println!("umap: {nx}x{ny} grid, metric {metric}, {} landmarks", landmarks.len());
    Ok(0)
}

/// Metric for one grid cell with the optical axis along world +x. `fast` is
/// the fused centroid metric, `full` the per-feature information
/// log-determinant, `oracle` the empirical perturb-and-resolve standard
/// deviation.
pub fn grid_metric(
    metric: &str,
    camera: &CameraModel,
    pose: &CameraPose,
    landmarks: &[Landmark],
    lambda: f64,
    trials: usize,
    seed: u64,
) -> f64 {
    match metric {
        "full" => {
            let cov = camera.bearing_covariance(CovarianceMode::Isotropic);
            let fim = fim_full(camera, pose, landmarks, lambda, &cov);
            neg_log_det_floored(&fim).0
        }
        "oracle" => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                seed ^ pose.position.x.to_bits() ^ pose.position.y.to_bits().rotate_left(17),
            );
            pnp_uncertainty_oracle(camera, pose, landmarks, trials, &mut rng)
                .unwrap_or(f64::INFINITY)
        }
        _ => crate::camera::fast_uncertainty(camera, pose, landmarks, lambda, 1e-6).metric,
    }
}

fn cmd_simulate(flags: &Flags) -> Result<i32> {
    let out = flags.out_dir();
    std::fs::create_dir_all(&out)?;

    let params = load_quad(flags)?;
    let traj_path = flags
        .path("trajectory")
        .ok_or_else(|| Error::Parse("missing required flag --trajectory".into()))?;
    let trajectory = DiscreteTrajectory::read_csv(&traj_path)?;
    let reference = ReferenceTrajectory::from_discrete(&trajectory)?;

    let mut scenario = match flags.path("scenario") {
        Some(p) => ScenarioConfig::from_json_file(&p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = flags.get("seed") {
        scenario.seed =
            seed.parse().map_err(|_| Error::Parse("flag --seed: invalid integer".into()))?;
    }
    if let Some(kind) = flags.get("controller") {
        scenario.controller.kind = match kind {
            "contouring" => ControllerKind::Contouring,
            "naive" => ControllerKind::Naive,
            other => return Err(Error::Parse(format!("unknown controller '{other}'"))),
        };
    }
    let track: Option<Track> = match flags.path("track") {
        Some(p) => Some(track::load_track(&p, &params)?),
        None => None,
    };

    let (log, summary) =
        mpctc::simulate_closed_loop(&reference, &params, &scenario, track.as_ref())?;
    std::fs::write(out.join("tracking.csv"), log.to_csv())?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    RunManifest::new("simulate", flags, scenario.seed).write(&out)?;
    println!(
        "simulate: rmse {:.4} m, max {:.4} m, path max {:.4} m, success {}",
        summary.rmse, summary.max_error, summary.max_path_distance, summary.success
    );
    if !summary.success {
        eprintln!("missed constraints: {:?}", summary.constraints_missed);
        return Ok(2);
    }
    Ok(0)
}

/// Default sampling interval for trajectory evaluation [s].
pub const EVALUATE_INTERVAL: f64 = 0.05;
/// Uncertainty ceiling beyond which the estimate is considered lost [m].
pub const EVALUATE_THRESHOLD: f64 = 2.0;
/// Accumulation per sample once the estimate is lost [m].
pub const EVALUATE_INCREMENT: f64 = 0.1;

#[derive(Debug, Serialize)]
pub struct EvaluateSummary {
    pub samples: usize,
    pub mean_metric: f64,
    pub mean_uncertainty: f64,
    pub max_uncertainty: f64,
    pub median_visible: f64,
    pub lost_fraction: f64,
}

fn cmd_evaluate(flags: &Flags) -> Result<i32> {
    let out = flags.out_dir();
    std::fs::create_dir_all(&out)?;

    let params = load_quad(flags)?;
    let traj_path = flags
        .path("trajectory")
        .ok_or_else(|| Error::Parse("missing required flag --trajectory".into()))?;
    let trajectory = DiscreteTrajectory::read_csv(&traj_path)?;
    let reference = ReferenceTrajectory::from_discrete(&trajectory)?;
    let scene_path = flags
        .path("scene")
        .ok_or_else(|| Error::Parse("missing required flag --scene".into()))?;
    let landmarks = load_scene(&scene_path, &params)?;
    let camera = load_camera(flags)?;
    let weights = load_weights(flags)?;

    let interval = flags.f64_or("interval", EVALUATE_INTERVAL)?;
    let threshold = flags.f64_or("threshold", EVALUATE_THRESHOLD)?;
    let increment = flags.f64_or("increment", EVALUATE_INCREMENT)?;
    if interval <= 0.0 {
        return Err(Error::Parse("sampling interval must be positive".into()));
    }

    let rows = evaluate_uncertainty(
        &reference, &camera, &landmarks, &weights, interval, threshold, increment,
    );

    let mut csv = String::from(
        "# schema: raceline-evaluate-v1\nt,px,py,pz,metric,sigma,accumulated,visible\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.t, r.position.x, r.position.y, r.position.z, r.metric, r.sigma, r.accumulated,
            r.visible
        ));
    }
    std::fs::write(out.join("uncertainty.csv"), csv)?;

    let mut visible: Vec<usize> = rows.iter().map(|r| r.visible).collect();
    visible.sort_unstable();
    let summary = EvaluateSummary {
        samples: rows.len(),
        mean_metric: rows.iter().map(|r| r.metric).sum::<f64>() / rows.len().max(1) as f64,
        mean_uncertainty: rows.iter().map(|r| r.accumulated).sum::<f64>()
            / rows.len().max(1) as f64,
        max_uncertainty: rows.iter().map(|r| r.accumulated).fold(0.0, f64::max),
        median_visible: visible.get(visible.len() / 2).copied().unwrap_or(0) as f64,
        lost_fraction: rows.iter().filter(|r| r.lost).count() as f64 / rows.len().max(1) as f64,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    RunManifest::new("evaluate", flags, flags.u64_or("seed", 0)?).write(&out)?;
    println!(
        "evaluate: {} samples, mean uncertainty {:.3} m, median visible {}",
        summary.samples, summary.mean_uncertainty, summary.median_visible
    );
    Ok(0)
}

/// One uncertainty sample along a trajectory.
#[derive(Debug, Clone)]
pub struct EvaluateRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub metric: f64,
    /// Instantaneous position uncertainty [m].
    pub sigma: f64,
    /// Uncertainty after the loss-accumulation rule [m].
    pub accumulated: f64,
    pub visible: usize,
    pub lost: bool,
}

/// Sample the trajectory at a fixed interval and compute the position
/// uncertainty. Whenever the instantaneous uncertainty exceeds `threshold`,
/// the estimate is considered lost and the reported value grows from the last
/// valid value by `increment` per sample until vision recovers.
pub fn evaluate_uncertainty(
    reference: &ReferenceTrajectory,
    camera: &CameraModel,
    landmarks: &[Landmark],
    weights: &PerceptionWeights,
    interval: f64,
    threshold: f64,
    increment: f64,
) -> Vec<EvaluateRow> {
    let mut rows = Vec::new();
    let mut t = reference.start_time();
    let mut last_valid = 0.0;
    let mut lost_steps = 0usize;
    while t <= reference.end_time() + 1e-9 {
        let (state, _) = reference.sample(t);
        let pose = CameraPose::from_body(&state.position, &state.orientation, camera);
        let report = crate::camera::fast_uncertainty(
            camera,
            &pose,
            landmarks,
            weights.lambda_v,
            weights.epsilon,
        );
        let sigma = report.position_sigma();
        let visible = landmarks
            .iter()
            .filter(|lm| camera.hard_visibility(&pose.world_to_camera(&lm.centroid)))
            .count();
        let lost = sigma > threshold;
        let accumulated = if lost {
            lost_steps += 1;
            last_valid + increment * lost_steps as f64
        } else {
            lost_steps = 0;
            last_valid = sigma;
            sigma
        };
        rows.push(EvaluateRow {
            t,
            position: state.position,
            metric: report.metric,
            sigma,
            accumulated,
            visible,
            lost,
        });
        t += interval;
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsing() {
        let args: Vec<String> = ["--track", "a.json", "--mp", "5", "--dtbar=0.01"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let flags = Flags::parse(&args).unwrap();
        assert_eq!(flags.get("track").unwrap(), "a.json");
        assert_eq!(flags.usize_or("mp", 1).unwrap(), 5);
        assert_eq!(flags.f64_or("dtbar", 0.0).unwrap(), 0.01);
        assert!(flags.get("missing").is_none());
        assert!(Flags::parse(&["loose".to_string()]).is_err());
    }

    #[test]
    fn perception_token_parsing() {
        let t = parse_perception("none").unwrap();
        assert!(!t.any());
        let t = parse_perception("la-pum").unwrap();
        assert!(t.la && t.pum && t.mr && !t.fov);
        let t = parse_perception("fov").unwrap();
        assert!(t.fov && t.mr);
        assert!(parse_perception("magic").is_err());
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(run(vec!["frobnicate".into()]), 1);
        assert_eq!(run(vec![]), 1);
    }

    #[test]
    fn evaluate_constants_match_protocol() {
        assert_eq!(EVALUATE_INTERVAL, 0.05);
        assert_eq!(EVALUATE_THRESHOLD, 2.0);
        assert_eq!(EVALUATE_INCREMENT, 0.1);
    }

    #[test]
    fn accumulation_rule_grows_while_lost() {
        // hover far from any landmark: uncertainty immediately exceeds the
        // threshold and must grow by the increment each sample
        let params = QuadParams::default();
        let camera = CameraModel::default();
        let state = crate::quad::QuadState::hover(Vector3::new(100.0, 0.0, 1.0), &params);
        let nodes: Vec<crate::trajectory::TrajectoryNode> = (0..5)
            .map(|k| crate::trajectory::TrajectoryNode {
                t: k as f64 * 0.1,
                state: state.clone(),
                input: crate::quad::RotorRateInput::zeros(),
            })
            .collect();
        let reference = ReferenceTrajectory::from_discrete(&DiscreteTrajectory {
            nodes,
            ..Default::default()
        })
        .unwrap();
        let lm = Landmark::new(Vector3::new(0.0, 0.0, 1.0), Vector3::x(), 1.45, vec![]).unwrap();
        let rows = evaluate_uncertainty(
            &reference,
            &camera,
            &[lm],
            &PerceptionWeights::default(),
            0.05,
            EVALUATE_THRESHOLD,
            EVALUATE_INCREMENT,
        );
        assert!(rows.iter().all(|r| r.lost));
        for (k, r) in rows.iter().enumerate() {
            approx::assert_relative_eq!(r.accumulated, 0.1 * (k + 1) as f64, epsilon = 1e-12);
        }
    }
}
