//! The `snaketrack` subcommands. Every `cmd_*` function is callable from
//! library code; failures carry the process exit code.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{initial_belief, EstimatorConfig, Tracker};
use crate::kinematics::{skeleton_points, RobotModel};
use crate::masks::{write_png, BinaryMask};
use crate::renderer::{project_points, render_robot_hard};
use crate::synth::{
    evaluate_sequence, generate_trajectory, perturb_state, read_jsonl, render_dataset, Dataset, MetricsReport,
    SynthConfig, METRICS_HEADER,
};
use crate::types::{Belief, CameraIntrinsics, RobotState, StateVector};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INIT: u8 = 4;

/// Written next to the trajectory file.
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// A command failure and the exit code it maps to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    pub fn io(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }

    pub fn init(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INIT,
            message: message.to_string(),
        }
    }

    fn with_context(mut self, ctx: impl fmt::Display) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }

    /// I/O errors map to 3, everything else to 2.
    fn classify(e: Error) -> Self {
        match e {
            Error::Io { .. } => Self::io(e),
            e => Self::config(e),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (exit {})", self.message, self.code)
    }
}

impl std::error::Error for Failure {}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "snaketrack", version, about = "Silhouette-based state estimation for serpentine robots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic mask dataset with ground truth.
    Synth(SynthArgs),
    /// Track a mask sequence and write the per-frame trajectory.
    Estimate(EstimateArgs),
    /// Score a trajectory against the dataset ground truth.
    Eval(EvalArgs),
    /// Plot a metrics report (CSV) or joint trajectories (JSONL) as SVG.
    Plot(PlotArgs),
    /// Draw the estimated skeleton and mask boundary over each frame.
    Overlay(OverlayArgs),
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Estimate(a) => cmd_estimate(&a).map(|_| ()),
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            println!("{}", report.summary());
            Ok(())
        }
        Command::Plot(a) => cmd_plot(&a),
        Command::Overlay(a) => cmd_overlay(&a),
    }
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// Scene TOML; its `model` path is resolved relative to this file.
    pub config: PathBuf,
    /// Output dataset directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    let cfg: SynthConfig =
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let model = RobotModel::load(&base.join(&cfg.model)).map_err(Failure::config)?;
    cfg.camera.validate().map_err(Failure::config)?;
    cfg.noise.validate().map_err(Failure::config)?;
    let traj = generate_trajectory(&model, &cfg.trajectory).map_err(Failure::config)?;
    let meta = render_dataset(
        &traj,
        &cfg.trajectory.times(),
        &model,
        &cfg.camera,
        &cfg.noise,
        cfg.trajectory.seed,
        &args.out,
    )
    .map_err(Failure::classify)?;
    log::info!("wrote {} frames to {}", meta.frames.len(), args.out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Ground-truth frame 0 with the configured perturbation.
    GtPerturbed,
    /// State read from `--init-file`.
    File,
}

/// Perturbation applied to ground truth for `--init gt-perturbed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitNoise {
    /// Per-axis translation std, metres.
    pub trans_std: f64,
    /// Per-joint std, radians.
    pub angle_std: f64,
    /// Per-component quaternion std before renormalization.
    pub quat_std: f64,
    pub seed: u64,
}

impl Default for InitNoise {
    fn default() -> Self {
        Self {
            trans_std: 0.01,
            angle_std: 0.05,
            quat_std: 0.0,
            seed: 0,
        }
    }
}

/// Contents of the `--config` file of `estimate`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub estimator: EstimatorConfig,
    pub init: InitNoise,
}

impl RunConfig {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }
}

/// JSON file accepted by `--init-file`. A missing `sigma_diag` uses the
/// default prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitFile {
    pub state: Vec<f64>,
    #[serde(default)]
    pub sigma_diag: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Args)]
pub struct EstimateArgs {
    /// Dataset directory containing `meta.json` and the frames.
    pub dataset: PathBuf,
    /// Output `trajectory.jsonl`; the run manifest goes beside it.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Robot model TOML (defaults to the dataset's copy).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Run configuration TOML with `[estimator]` and `[init]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub refine_steps: Option<usize>,
    #[arg(long)]
    pub meas_noise_px: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitMode::GtPerturbed)]
    pub init: InitMode,
    #[arg(long)]
    pub init_file: Option<PathBuf>,
}

impl EstimateArgs {
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            out: out.into(),
            model: None,
            config: None,
            refine_steps: None,
            meas_noise_px: None,
            init: InitMode::GtPerturbed,
            init_file: None,
        }
    }
}

/// One line of `trajectory.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frame: usize,
    pub t: f64,
    pub state: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    /// Observed minus predicted centroid; null when the update was skipped.
    pub residual: Option<[f64; 2]>,
    /// Mask loss after refinement; null when refinement was skipped.
    pub loss: Option<f64>,
    pub seconds: f64,
}

impl TrajectoryRecord {
    pub fn robot_state(&self, joints: usize) -> crate::Result<RobotState> {
        if self.state.len() != joints + 7 {
            return Err(Error::dim("trajectory state", joints + 7, self.state.len()));
        }
        StateVector(self.state.clone()).to_state(joints)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub config: Option<PathBuf>,
    pub init_file: Option<PathBuf>,
    pub trajectory: PathBuf,
}

/// Summary of one `estimate` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub estimator: EstimatorConfig,
    pub init_mode: InitMode,
    pub init_noise: InitNoise,
    pub model: RobotModel,
    pub paths: RunPaths,
    /// Seed of the initial-state perturbation.
    pub seed: u64,
    /// Wall clock, seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub frames: usize,
    /// Time spent inside the estimator, summed over frames.
    pub estimator_seconds: f64,
    pub mean_fps: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, text: &str) -> CmdResult {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Failure::io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn resolve_model(explicit: Option<&Path>, dataset: &Dataset) -> CmdResult<(PathBuf, RobotModel)> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| dataset.model_path());
    let model = RobotModel::load(&path).map_err(Failure::config)?;
    Ok((path, model))
}

const INIT_FLAGS: &str = "--init file and --init-file must be given together";

fn initial_state(
    args: &EstimateArgs,
    dataset: &Dataset,
    model: &RobotModel,
    noise: &InitNoise,
) -> CmdResult<Belief> {
    let d = model.state_dim();
    match (args.init, &args.init_file) {
        (InitMode::File, None) | (InitMode::GtPerturbed, Some(_)) => Err(Failure::config(INIT_FLAGS)),
        (InitMode::File, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::init(format!("{}: {e}", path.display())))?;
            let f: InitFile =
                serde_json::from_str(&text).map_err(|e| Failure::init(format!("{}: {e}", path.display())))?;
            if f.state.len() != d {
                return Err(Failure::init(format!(
                    "{}: state has {} entries, expected {d}",
                    path.display(),
                    f.state.len()
                )));
            }
            let state = StateVector(f.state)
                .to_state(model.joint_count())
                .map_err(|e| Failure::init(format!("{}: {e}", path.display())))?;
            let mut belief = initial_belief(state);
            if let Some(diag) = f.sigma_diag {
                if diag.len() != d || diag.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Failure::init(format!(
                        "{}: sigma_diag needs {d} non-negative entries",
                        path.display()
                    )));
                }
                belief.covariance = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
            }
            Ok(belief)
        }
        (InitMode::GtPerturbed, None) => {
            let gt = dataset
                .load_gt()
                .map_err(|e| Failure::init(format!("cannot initialize from ground truth: {e}")))?;
            let first = gt
                .first()
                .ok_or_else(|| Failure::init("ground truth is empty"))?
                .state()
                .map_err(Failure::init)?;
            if first.joint_count() != model.joint_count() {
                return Err(Failure::init(format!(
                    "ground truth has {} joints, the model {}",
                    first.joint_count(),
                    model.joint_count()
                )));
            }
            let s = perturb_state(&first, noise.trans_std, noise.angle_std, noise.quat_std, noise.seed)
                .map_err(Failure::config)?;
            Ok(initial_belief(s))
        }
    }
}

fn load_frame(dataset: &Dataset, i: usize) -> CmdResult<BinaryMask> {
    if i >= dataset.len() {
        return Err(Failure::config(format!("frame {i} is not in the dataset ({} frames)", dataset.len())));
    }
    dataset
        .load_frame(i)
        .map_err(|e| Failure::io(format!("frame {i} ({}): {e}", dataset.meta.frames[i].file)))
}

/// Runs the tracker over a dataset; returns the run manifest.
pub fn cmd_estimate(args: &EstimateArgs) -> CmdResult<RunManifest> {
    let started_at = unix_now();
    if (args.init == InitMode::File) != args.init_file.is_some() {
        return Err(Failure::config(INIT_FLAGS));
    }
    let dataset = Dataset::open(&args.dataset).map_err(Failure::config)?;
    let cam = dataset.camera();
    cam.validate().map_err(Failure::config)?;
    let (model_path, model) = resolve_model(args.model.as_deref(), &dataset)?;
    let mut run_cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.refine_steps {
        run_cfg.estimator.refine_steps = n;
    }
    if let Some(r) = args.meas_noise_px {
        run_cfg.estimator.meas_noise_px = r;
    }
    let cfg = run_cfg.estimator.clone();
    cfg.validate().map_err(Failure::config)?;
    let pn = cfg.process_noise.len();
    if pn != 0 && pn != model.state_dim() {
        return Err(Failure::config(format!(
            "process_noise has {pn} entries, expected 0 or {}",
            model.state_dim()
        )));
    }

    let first = if dataset.is_empty() { None } else { Some(load_frame(&dataset, 0)?) };
    if first.as_ref().is_some_and(BinaryMask::is_empty) && args.init_file.is_none() {
        return Err(Failure::init(
            "first mask is empty: cannot initialize without --init file --init-file",
        ));
    }
    let belief = initial_state(args, &dataset, &model, &run_cfg.init)?;
    let mut tracker = Tracker::new(belief, &model, &cam, &cfg).map_err(Failure::config)?;

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    }
    let file = fs::File::create(&args.out).map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    let mut out = BufWriter::new(file);
    let write_err = |e: std::io::Error| Failure::io(format!("{}: {e}", args.out.display()));

    let mut total = 0.0;
    let mut first = first;
    for i in 0..dataset.len() {
        let mask = match first.take() {
            Some(m) => m,
            None => load_frame(&dataset, i)?,
        };
        let t = dataset.meta.frames[i].t;
        let clock = Instant::now();
        let outcome = tracker
            .process(t, &mask)
            .map_err(|e| Failure::classify(e).with_context(format!("frame {i}")))?;
        let seconds = clock.elapsed().as_secs_f64();
        total += seconds;
        let b = &outcome.belief;
        let rec = TrajectoryRecord {
            frame: i,
            t,
            state: StateVector::from_state(&b.mean).0,
            sigma_diag: b.covariance.diagonal().iter().copied().collect(),
            residual: outcome.residual.map(|(u, v)| [u, v]),
            loss: outcome.loss,
            seconds,
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(write_err)?;
        log::debug!("frame {i}: loss {:?} in {seconds:.3}s", outcome.loss);
    }
    out.flush().map_err(write_err)?;

    let frames = dataset.len();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        estimator: cfg.clone(),
        init_mode: args.init,
        init_noise: run_cfg.init,
        model: model.clone(),
        paths: RunPaths {
            dataset: args.dataset.clone(),
            model: model_path,
            config: args.config.clone(),
            init_file: args.init_file.clone(),
            trajectory: args.out.clone(),
        },
        seed: run_cfg.init.seed,
        started_at,
        finished_at: unix_now(),
        frames,
        estimator_seconds: total,
        mean_fps: if total > 0.0 { frames as f64 / total } else { 0.0 },
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&manifest_path(&args.out), &text)?;
    log::info!("{frames} frames at {:.2} FPS", manifest.mean_fps);
    Ok(manifest)
}

/// Where `estimate` puts the manifest for a given trajectory path.
pub fn manifest_path(trajectory: &Path) -> PathBuf {
    trajectory.with_file_name(MANIFEST_FILE)
}

pub fn load_trajectory(path: &Path) -> CmdResult<Vec<TrajectoryRecord>> {
    read_jsonl(path).map_err(Failure::classify)
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    pub trajectory: PathBuf,
    pub dataset: PathBuf,
    /// Output metrics CSV.
    #[arg(short, long)]
    pub report: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Per-frame errors and IoU against the clean ground-truth silhouettes.
pub fn cmd_eval(args: &EvalArgs) -> CmdResult<MetricsReport> {
    let dataset = Dataset::open(&args.dataset).map_err(Failure::config)?;
    let (_, model) = resolve_model(args.model.as_deref(), &dataset)?;
    let cam = dataset.camera();
    let records = load_trajectory(&args.trajectory)?;
    let gt = dataset.load_gt().map_err(Failure::classify)?;
    if records.len() != gt.len() {
        return Err(Failure::config(format!(
            "trajectory has {} frames, ground truth {}",
            records.len(),
            gt.len()
        )));
    }
    if let Some((i, r)) = records.iter().enumerate().find(|(i, r)| r.frame != *i) {
        return Err(Failure::config(format!("trajectory line {i} holds frame {}", r.frame)));
    }
    let joints = model.joint_count();
    let est: Vec<RobotState> = records
        .iter()
        .map(|r| r.robot_state(joints))
        .collect::<crate::Result<_>>()
        .map_err(Failure::config)?;
    let truth: Vec<RobotState> = gt.iter().map(|g| g.state()).collect::<crate::Result<_>>().map_err(Failure::config)?;
    let z_near = crate::renderer::RenderSettings::default().z_near;
    let render = |states: &[RobotState]| -> CmdResult<Vec<BinaryMask>> {
        states
            .iter()
            .map(|s| render_robot_hard(&model, s, &cam, z_near))
            .collect::<crate::Result<_>>()
            .map_err(Failure::config)
    };
    let times: Vec<f64> = gt.iter().map(|g| g.t).collect();
    let report = evaluate_sequence(&est, &truth, &times, &render(&est)?, &render(&truth)?)
        .map_err(Failure::config)?;
    if let Some(dir) = args.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(&args.report, report.to_csv()).map_err(|e| Failure::io(format!("{}: {e}", args.report.display())))?;
    Ok(report)
}

#[derive(Clone, Debug, Args)]
pub struct PlotArgs {
    /// Metrics CSV from `eval`, or a `trajectory.jsonl`.
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Robot model, used to label joint series from a trajectory.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// One named line of a plot.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

pub fn cmd_plot(args: &PlotArgs) -> CmdResult {
    let is_jsonl = args.input.extension().is_some_and(|e| e == "jsonl");
    let svg = if is_jsonl {
        let records = load_trajectory(&args.input)?;
        let model = args
            .model
            .as_deref()
            .map(RobotModel::load)
            .transpose()
            .map_err(Failure::config)?;
        let joints = match (&model, records.first()) {
            (Some(m), _) => m.joint_count(),
            (None, Some(r)) => r.state.len().saturating_sub(7),
            (None, None) => 0,
        };
        let x: Vec<f64> = records.iter().map(|r| r.t).collect();
        let series = (0..joints)
            .map(|j| Series {
                name: match &model {
                    Some(m) => format!("theta{} ({:?})", j + 1, m.links[j].joint_axis).to_lowercase(),
                    None => format!("theta{}", j + 1),
                },
                values: records.iter().map(|r| r.state.get(j).copied().unwrap_or(f64::NAN)).collect(),
            })
            .collect::<Vec<_>>();
        svg_plot("joint angles [rad]", "t [s]", &x, &series)
    } else {
        let text = fs::read_to_string(&args.input).map_err(|e| Failure::io(format!("{}: {e}", args.input.display())))?;
        let (frames, cols) = parse_report(&text).map_err(|m| Failure::config(format!("{}: {m}", args.input.display())))?;
        let names = ["pos_err_m", "joint_err_rad", "iou"];
        let series: Vec<Series> = names
            .iter()
            .zip(cols)
            .map(|(n, values)| Series {
                name: n.to_string(),
                values,
            })
            .collect();
        svg_plot("per-frame metrics", "frame", &frames, &series)
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(&args.out, svg).map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))
}

/// Frame column plus the three metric columns of a report CSV.
pub fn parse_report(text: &str) -> std::result::Result<(Vec<f64>, [Vec<f64>; 3]), String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => return Err(format!("expected header `{METRICS_HEADER}`, found {other:?}")),
    }
    let mut frames = Vec::new();
    let mut cols: [Vec<f64>; 3] = Default::default();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", n + 2))?;
        if vals.len() != 5 {
            return Err(format!("line {}: expected 5 fields, found {}", n + 2, vals.len()));
        }
        frames.push(vals[0]);
        for k in 0..3 {
            cols[k].push(vals[2 + k]);
        }
    }
    Ok((frames, cols))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart with axes and one polyline per non-empty series.
pub fn svg_plot(title: &str, x_label: &str, x: &[f64], series: &[Series]) -> String {
    let (w, h, m) = (800.0, 420.0, 60.0);
    let finite = |v: &&f64| v.is_finite();
    let span = |it: &mut dyn Iterator<Item = &f64>| {
        let (lo, hi) = it.filter(finite).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if lo > hi {
            (0.0, 1.0)
        } else if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&mut x.iter());
    let (y0, y1) = span(&mut series.iter().flat_map(|s| s.values.iter()));
    let px = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    s += &format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");
    s += &format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        w / 2.0,
        xml_escape(title)
    );
    s += &format!(
        "<g class=\"axes\" stroke=\"black\"><line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\"/></g>\n",
        b = h - m,
        r = w - m
    );
    let label = |x: f64, y: f64, anchor: &str, text: String| {
        format!("<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"12\">{text}</text>\n")
    };
    s += &label(m, h - m + 18.0, "middle", format!("{x0:.3}"));
    s += &label(w - m, h - m + 18.0, "middle", format!("{x1:.3}"));
    s += &label(w / 2.0, h - 16.0, "middle", xml_escape(x_label));
    s += &label(m - 6.0, h - m, "end", format!("{y0:.3}"));
    s += &label(m - 6.0, m + 4.0, "end", format!("{y1:.3}"));

    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(&ser.values)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", px(a), py(b)))
            .collect();
        let ly = m + 16.0 * k as f64;
        s += &format!(
            "<text x=\"{:.1}\" y=\"{ly:.1}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            w - m + 4.0,
            xml_escape(&ser.name)
        );
        if !pts.is_empty() {
            s += &format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{}</title></polyline>\n",
                pts.join(" "),
                xml_escape(&ser.name)
            );
        }
    }
    s + "</svg>\n"
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Clone, Debug, Args)]
pub struct OverlayArgs {
    pub trajectory: PathBuf,
    pub dataset: PathBuf,
    /// Directory for `overlay_NNNNNN.png` images.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Image positions of the base origin and every link's distal endpoint.
pub fn skeleton_pixels(model: &RobotModel, cam: &CameraIntrinsics, state: &RobotState) -> crate::Result<Vec<[f64; 2]>> {
    let pts = skeleton_points(model, &state.theta)?;
    Ok(project_points(cam, &state.pose, &pts).into_iter().map(|p| [p[0], p[1]]).collect())
}

const OBSERVED: [u8; 3] = [70, 70, 70];
const BOUNDARY: [u8; 3] = [40, 220, 80];
const BONE: [u8; 3] = [230, 40, 40];
const JOINT: [u8; 3] = [250, 210, 30];

/// RGB frame: observed mask in gray, predicted-mask boundary in green and
/// the projected skeleton in red with yellow joints.
pub fn render_overlay(
    observed: &BinaryMask,
    predicted: &BinaryMask,
    skeleton: &[[f64; 2]],
) -> crate::Result<Vec<u8>> {
    observed.same_dims(predicted)?;
    let (w, h) = (observed.width(), observed.height());
    let mut img = vec![0u8; w * h * 3];
    let put = |img: &mut [u8], u: i64, v: i64, c: [u8; 3]| {
        if u >= 0 && v >= 0 && (u as usize) < w && (v as usize) < h {
            let i = (v as usize * w + u as usize) * 3;
            img[i..i + 3].copy_from_slice(&c);
        }
    };
    for v in 0..h {
        for u in 0..w {
            if observed.get(u, v) {
                put(&mut img, u as i64, v as i64, OBSERVED);
            }
            let inside = predicted.get(u, v);
            let edge = inside
                && (u == 0 || v == 0 || u + 1 == w || v + 1 == h || {
                    !predicted.get(u - 1, v) || !predicted.get(u + 1, v) || !predicted.get(u, v - 1) || !predicted.get(u, v + 1)
                });
            if edge {
                put(&mut img, u as i64, v as i64, BOUNDARY);
            }
        }
    }
    for pair in skeleton.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let n = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).clamp(1, 4 * (w + h));
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let (x, y) = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
            if x.is_finite() && y.is_finite() {
                put(&mut img, x.floor() as i64, y.floor() as i64, BONE);
            }
        }
    }
    for p in skeleton.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
        let (cu, cv) = (p[0].floor() as i64, p[1].floor() as i64);
        for dv in -1..=1 {
            for du in -1..=1 {
                put(&mut img, cu + du, cv + dv, JOINT);
            }
        }
    }
    Ok(img)
}

pub fn overlay_file_name(index: usize) -> String {
    format!("overlay_{index:06}.png")
}

pub fn cmd_overlay(args: &OverlayArgs) -> CmdResult {
    let dataset = Dataset::open(&args.dataset).map_err(Failure::config)?;
    let (_, model) = resolve_model(args.model.as_deref(), &dataset)?;
    let cam = dataset.camera();
    let records = load_trajectory(&args.trajectory)?;
    if records.len() > dataset.len() {
        return Err(Failure::config(format!(
            "trajectory has {} frames, dataset {}",
            records.len(),
            dataset.len()
        )));
    }
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    let z_near = crate::renderer::RenderSettings::default().z_near;
    for r in &records {
        let state = r.robot_state(model.joint_count()).map_err(Failure::config)?;
        let observed = load_frame(&dataset, r.frame)?;
        let predicted = render_robot_hard(&model, &state, &cam, z_near).map_err(Failure::config)?;
        let skeleton = skeleton_pixels(&model, &cam, &state).map_err(Failure::config)?;
        let img = render_overlay(&observed, &predicted, &skeleton).map_err(Failure::config)?;
        write_png(
            &args.out.join(overlay_file_name(r.frame)),
            cam.width,
            cam.height,
            &img,
            png::ColorType::Rgb,
        )
        .map_err(Failure::classify)?;
    }
    Ok(())
}
