//! Synthetic ground truth: trajectories, degraded hard-mask sequences on
//! disk, initial-guess perturbation and sequence metrics.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::masks::{dilate, dilate_signed, erode, iou, load_mask, mask_to_box, save_mask, BBox, BinaryMask};
use crate::renderer::render_robot_hard;
use crate::types::{CameraIntrinsics, Pose, RobotState, UnitQuaternion, Vec3};

/// Dilation applied to the previous mask before taking its prompt box.
pub const PROMPT_DILATION_PX: usize = 5;

/// File names inside a dataset directory.
pub const META_FILE: &str = "meta.json";
pub const GT_FILE: &str = "gt.jsonl";
pub const MODEL_FILE: &str = "model.toml";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Base pose in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    /// `[w, x, y, z]`, normalized on use.
    pub quat: [f64; 4],
    pub trans: [f64; 3],
}

impl PoseConfig {
    pub fn to_pose(&self) -> Result<Pose> {
        Ok(Pose::new(
            UnitQuaternion::from_array(self.quat)?,
            Vec3::from(self.trans),
        ))
    }
}

impl From<&Pose> for PoseConfig {
    fn from(p: &Pose) -> Self {
        Self {
            quat: p.rotation.to_array(),
            trans: p.translation.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    pub joint_amplitudes: Vec<f64>,
    /// Hz.
    pub joint_frequencies: Vec<f64>,
    pub joint_phases: Vec<f64>,
    /// m/s in the camera frame.
    pub base_velocity: [f64; 3],
    pub base_start: PoseConfig,
    /// Default seed for anything random derived from this scene.
    #[serde(default)]
    pub seed: u64,
}

impl TrajectoryConfig {
    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Parameter("frames must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        for (name, v) in [
            ("joint_amplitudes", &self.joint_amplitudes),
            ("joint_frequencies", &self.joint_frequencies),
            ("joint_phases", &self.joint_phases),
        ] {
            if v.len() != joints {
                return Err(Error::Parameter(format!(
                    "{name} has {} entries but the model has {joints} joints",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    /// Sample times `i·dt`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.frames).map(|i| i as f64 * self.dt).collect()
    }

    /// Frozen curved pose seen from 1.5 m, rolled 45° about the chain axis.
    pub fn static_scene(joints: usize, frames: usize) -> Self {
        let phases = (0..joints)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.2 } + 0.3 * k as f64)
            .collect();
        Self {
            frames,
            dt: 0.1,
            joint_amplitudes: vec![0.3; joints],
            joint_frequencies: vec![0.0; joints],
            joint_phases: phases,
            base_velocity: [0.0; 3],
            base_start: PoseConfig {
                quat: roll_45(),
                trans: [-0.45, 0.0, 1.5],
            },
            seed: 7,
        }
    }

    /// Travelling-wave gait drifting sideways at 0.05 m/s.
    pub fn moving_benchmark(joints: usize) -> Self {
        Self {
            frames: 100,
            dt: 0.1,
            joint_amplitudes: vec![0.3; joints],
            joint_frequencies: vec![0.2; joints],
            joint_phases: (0..joints).map(|k| k as f64 * std::f64::consts::FRAC_PI_3).collect(),
            base_velocity: [0.05, 0.0, 0.0],
            base_start: PoseConfig {
                quat: roll_45(),
                trans: [-0.7, 0.0, 1.5],
            },
            seed: 11,
        }
    }
}

fn roll_45() -> [f64; 4] {
    let h = std::f64::consts::FRAC_PI_8;
    [h.cos(), h.sin(), 0.0, 0.0]
}

/// Sinusoidal joints, constant base velocity, fixed orientation.
pub fn generate_trajectory(model: &RobotModel, cfg: &TrajectoryConfig) -> Result<Vec<RobotState>> {
    cfg.validate(model.joint_count())?;
    let start = cfg.base_start.to_pose()?;
    let v = Vec3::from(cfg.base_velocity);
    Ok(cfg
        .times()
        .into_iter()
        .map(|t| {
            let theta = (0..model.joint_count())
                .map(|k| {
                    let w = 2.0 * std::f64::consts::PI * cfg.joint_frequencies[k];
                    cfg.joint_amplitudes[k] * (w * t + cfg.joint_phases[k]).sin()
                })
                .collect();
            RobotState::new(theta, Pose::new(start.rotation, start.translation + v * t))
        })
        .collect())
}

/// Segmentation-error model applied to clean masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Half-width of the band around the boundary whose pixels are
    /// resampled, pixels.
    pub boundary_jitter_px: f64,
    /// Positive dilates, negative erodes.
    pub erode_dilate_px: i32,
    /// Independent per-pixel flip probability.
    pub pixel_flip_rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            boundary_jitter_px: 1.0,
            erode_dilate_px: 1,
            pixel_flip_rate: 0.002,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            boundary_jitter_px: 0.0,
            erode_dilate_px: 0,
            pixel_flip_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.boundary_jitter_px >= 0.0 && self.boundary_jitter_px.is_finite()) {
            return Err(Error::Parameter("boundary_jitter_px must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.pixel_flip_rate) {
            return Err(Error::Parameter("pixel_flip_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.erode_dilate_px == 0 && self.boundary_jitter_px == 0.0 && self.pixel_flip_rate == 0.0
    }

    /// Independent random stream for one frame.
    pub fn frame_rng(&self, frame: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64);
        rng
    }

    /// Erode/dilate, then resample the boundary band, then salt-and-pepper.
    pub fn degrade(&self, clean: &BinaryMask, frame: usize) -> BinaryMask {
        let mut rng = self.frame_rng(frame);
        let mut out = dilate_signed(clean, self.erode_dilate_px);
        let band = self.boundary_jitter_px.ceil() as usize;
        if band > 0 {
            let outer = dilate(&out, band);
            let inner = erode(&out, band);
            for idx in 0..out.bits().len() {
                if outer.bits()[idx] && !inner.bits()[idx] && rng.random_bool(0.5) {
                    out.toggle_index(idx);
                }
            }
        }
        if self.pixel_flip_rate > 0.0 {
            for idx in 0..out.bits().len() {
                if rng.random_bool(self.pixel_flip_rate) {
                    out.toggle_index(idx);
                }
            }
        }
        out
    }
}

/// Per-frame entry of the dataset description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub file: String,
    /// Seconds.
    pub t: f64,
    /// Dilated box of the previous clean mask, if it had any pixels.
    pub prompt_box: Option<BBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub camera: CameraIntrinsics,
    pub model_file: String,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub frames: Vec<FrameMeta>,
}

/// Ground-truth record, one line of `gt.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub t: f64,
    pub theta: Vec<f64>,
    pub quat: [f64; 4],
    pub trans: [f64; 3],
}

impl GtRecord {
    pub fn new(t: f64, s: &RobotState) -> Self {
        Self {
            t,
            theta: s.theta.clone(),
            quat: s.pose.rotation.to_array(),
            trans: s.pose.translation.into(),
        }
    }

    pub fn state(&self) -> Result<RobotState> {
        Ok(RobotState::new(
            self.theta.clone(),
            Pose::new(UnitQuaternion::from_array(self.quat)?, Vec3::from(self.trans)),
        ))
    }
}

/// Writes degraded masks, `meta.json`, `gt.jsonl` and a copy of the model.
pub fn render_dataset(
    traj: &[RobotState],
    times: &[f64],
    model: &RobotModel,
    cam: &CameraIntrinsics,
    noise: &NoiseSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetMeta> {
    if traj.len() != times.len() {
        return Err(Error::dim("trajectory timestamps", traj.len(), times.len()));
    }
    noise.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let clean: Vec<BinaryMask> = traj
        .par_iter()
        .map(|s| render_robot_hard(model, s, cam, crate::renderer::RenderSettings::default().z_near))
        .collect::<Result<_>>()?;
    clean
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mask = if noise.is_clean() { m.clone() } else { noise.degrade(m, i) };
            save_mask(&mask, &out_dir.join(frame_file_name(i)))
        })
        .collect::<Result<()>>()?;

    let frames = (0..traj.len())
        .map(|i| FrameMeta {
            file: frame_file_name(i),
            t: times[i],
            prompt_box: i
                .checked_sub(1)
                .and_then(|p| mask_to_box(&dilate(&clean[p], PROMPT_DILATION_PX)).ok()),
        })
        .collect();
    let meta = DatasetMeta {
        camera: *cam,
        model_file: MODEL_FILE.into(),
        seed,
        noise: *noise,
        frames,
    };
    let meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_text(&out_dir.join(META_FILE), &(meta_text + "\n"))?;

    let mut gt = String::new();
    for (s, &t) in traj.iter().zip(times) {
        gt.push_str(&serde_json::to_string(&GtRecord::new(t, s)).expect("record serializes"));
        gt.push('\n');
    }
    write_text(&out_dir.join(GT_FILE), &gt)?;
    write_text(&out_dir.join(MODEL_FILE), &model.to_toml_string())?;
    Ok(meta)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A dataset directory opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        meta.camera.validate().map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.frames.is_empty()
    }

    pub fn camera(&self) -> CameraIntrinsics {
        self.meta.camera
    }

    pub fn frame_path(&self, i: usize) -> PathBuf {
        self.dir.join(&self.meta.frames[i].file)
    }

    /// Loads frame `i`, checking it against the camera size.
    pub fn load_frame(&self, i: usize) -> Result<BinaryMask> {
        let path = self.frame_path(i);
        let m = load_mask(&path)?;
        let cam = self.camera();
        if m.width() != cam.width || m.height() != cam.height {
            return Err(Error::format(
                &path,
                format!(
                    "mask is {}x{}, camera is {}x{}",
                    m.width(),
                    m.height(),
                    cam.width,
                    cam.height
                ),
            ));
        }
        Ok(m)
    }

    pub fn model_path(&self) -> PathBuf {
        self.dir.join(&self.meta.model_file)
    }

    pub fn gt_path(&self) -> PathBuf {
        self.dir.join(GT_FILE)
    }

    pub fn load_gt(&self) -> Result<Vec<GtRecord>> {
        read_jsonl(&self.gt_path())
    }
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Independent Gaussian noise on every component; the quaternion is
/// perturbed additively and renormalized.
pub fn perturb_state(
    state: &RobotState,
    trans_std: f64,
    angle_std: f64,
    quat_std: f64,
    seed: u64,
) -> Result<RobotState> {
    for (name, s) in [("trans_std", trans_std), ("angle_std", angle_std), ("quat_std", quat_std)] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be non-negative, got {s}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |std: f64| -> f64 {
        if std == 0.0 {
            0.0
        } else {
            Normal::new(0.0, std).expect("finite std").sample(&mut rng)
        }
    };
    let theta = state.theta.iter().map(|t| t + draw(angle_std)).collect();
    let q = state.pose.rotation.to_array();
    let dq: Vec<f64> = (0..4).map(|_| draw(quat_std)).collect();
    let rotation = if quat_std == 0.0 {
        state.pose.rotation
    } else {
        UnitQuaternion::new_normalize(q[0] + dq[0], q[1] + dq[1], q[2] + dq[2], q[3] + dq[3])?
    };
    let dt = Vec3::new(draw(trans_std), draw(trans_std), draw(trans_std));
    Ok(RobotState::new(theta, Pose::new(rotation, state.pose.translation + dt)))
}

/// One row of the metrics report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub t: f64,
    pub pos_err_m: f64,
    pub joint_err_rad: f64,
    pub iou: f64,
}

pub const METRICS_HEADER: &str = "frame,t,pos_err_m,joint_err_rad,iou";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
}

impl MetricsReport {
    fn mean(&self, f: impl Fn(&FrameMetrics) -> f64) -> f64 {
        if self.frames.is_empty() {
            return f64::NAN;
        }
        self.frames.iter().map(f).sum::<f64>() / self.frames.len() as f64
    }

    pub fn mean_pos_err(&self) -> f64 {
        self.mean(|m| m.pos_err_m)
    }

    pub fn mean_joint_err(&self) -> f64 {
        self.mean(|m| m.joint_err_rad)
    }

    pub fn mean_iou(&self) -> f64 {
        self.mean(|m| m.iou)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for m in &self.frames {
            s.push_str(&format!("{},{},{},{},{}\n", m.frame, m.t, m.pos_err_m, m.joint_err_rad, m.iou));
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "frames {}\nmean pos_err_m {:.6}\nmean joint_err_rad {:.6}\nmean iou {:.6}",
            self.frames.len(),
            self.mean_pos_err(),
            self.mean_joint_err(),
            self.mean_iou()
        )
    }
}

pub fn position_error(est: &RobotState, gt: &RobotState) -> f64 {
    (est.pose.translation - gt.pose.translation).norm()
}

/// Mean absolute joint error.
pub fn joint_error(est: &RobotState, gt: &RobotState) -> Result<f64> {
    if est.theta.len() != gt.theta.len() {
        return Err(Error::dim("joint angles", gt.theta.len(), est.theta.len()));
    }
    if gt.theta.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = est.theta.iter().zip(&gt.theta).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / gt.theta.len() as f64)
}

/// Per-frame errors against ground truth. Predicted masks are already
/// thresholded; a frame where both masks are empty scores IoU 1.
pub fn evaluate_sequence(
    estimates: &[RobotState],
    gt: &[RobotState],
    times: &[f64],
    masks_pred: &[BinaryMask],
    masks_gt: &[BinaryMask],
) -> Result<MetricsReport> {
    let n = gt.len();
    for (what, len) in [
        ("estimates", estimates.len()),
        ("timestamps", times.len()),
        ("predicted masks", masks_pred.len()),
        ("ground-truth masks", masks_gt.len()),
    ] {
        if len != n {
            return Err(Error::dim(what, n, len));
        }
    }
    let frames = (0..n)
        .map(|i| {
            let iou = match iou(&masks_pred[i], &masks_gt[i]) {
                Ok(v) => v,
                Err(Error::UndefinedIou) => 1.0,
                Err(e) => return Err(e),
            };
            Ok(FrameMetrics {
                frame: i,
                t: times[i],
                pos_err_m: position_error(&estimates[i], &gt[i]),
                joint_err_rad: joint_error(&estimates[i], &gt[i])?,
                iou,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport { frames })
}

/// Inputs of `snaketrack synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Robot model TOML, relative to the config file.
    pub model: PathBuf,
    #[serde(default = "CameraIntrinsics::working_default")]
    pub camera: CameraIntrinsics,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
}
