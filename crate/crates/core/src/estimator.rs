//! Online state estimation: constant-velocity prediction, an EKF update on
//! the silhouette centroid, and Adam refinement against the observed mask.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{self, FdSteps, GradientBackend, JacobianMatrix};
use crate::kinematics::RobotModel;
use crate::masks::BinaryMask;
use crate::renderer::{centroid, render_robot_soft, RenderSettings};
use crate::types::{Belief, CameraIntrinsics, RobotState, StateVector, Vec3};

/// Prior standard deviations used when a run starts from a perturbed guess.
pub const INIT_JOINT_STD: f64 = 0.1;
pub const INIT_QUAT_STD: f64 = 0.05;
pub const INIT_TRANS_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub refine_steps: usize,
    pub refine_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Centroid measurement noise, pixels (standard deviation).
    pub meas_noise_px: f64,
    /// Per-component process noise variances; empty means zero.
    pub process_noise: Vec<f64>,
    pub fd_steps: FdSteps,
    pub render: RenderSettings,
    pub backend: GradientBackend,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            refine_steps: 10,
            refine_lr: 0.005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            meas_noise_px: 2.0,
            process_noise: Vec::new(),
            fd_steps: FdSteps::default(),
            render: RenderSettings::default(),
            backend: GradientBackend::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.refine_lr > 0.0 && self.refine_lr.is_finite()) {
            return Err(Error::Parameter(format!("refine_lr must be positive, got {}", self.refine_lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Parameter("adam_eps must be positive".into()));
        }
        if !(self.meas_noise_px >= 0.0 && self.meas_noise_px.is_finite()) {
            return Err(Error::Parameter(format!(
                "meas_noise_px must be non-negative, got {}",
                self.meas_noise_px
            )));
        }
        if self.process_noise.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
            return Err(Error::Parameter("process_noise variances must be non-negative".into()));
        }
        self.fd_steps.validate()?;
        self.render.validate()
    }
}

/// Centroid of the observed mask, pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub m: (f64, f64),
}

impl Observation {
    pub fn from_mask(mask: &BinaryMask) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self { m: centroid(mask)? })
    }
}

/// Diagonal prior around `mean` with the default block deviations.
pub fn initial_belief(mean: RobotState) -> Belief {
    Belief::with_block_std(mean, INIT_JOINT_STD, INIT_QUAT_STD, INIT_TRANS_STD)
}

/// Constant-velocity motion model on the base translation.
pub fn predict(belief: &Belief, dt: f64, cfg: &EstimatorConfig) -> Result<Belief> {
    check_dt(dt)?;
    let d = belief.dim();
    let mut out = belief.clone();
    out.mean.pose.translation += belief.velocity * dt;
    match cfg.process_noise.len() {
        0 => {}
        n if n == d => {
            for (i, q) in cfg.process_noise.iter().enumerate() {
                out.covariance[(i, i)] += q;
            }
        }
        n => return Err(Error::dim("process_noise", d, n)),
    }
    Ok(out)
}

/// Kalman update of the belief mean and covariance from one centroid.
pub fn ekf_update(
    belief: &Belief,
    obs: &Observation,
    predicted: (f64, f64),
    h: &JacobianMatrix,
    cfg: &EstimatorConfig,
) -> Result<Belief> {
    let y = (obs.m.0 - predicted.0, obs.m.1 - predicted.1);
    let r = cfg.meas_noise_px * cfg.meas_noise_px;
    let (dx, covariance) = kalman_correction(&belief.covariance, h, y, r)?;
    let mut x = StateVector::from_state(&belief.mean);
    for (xi, di) in x.0.iter_mut().zip(dx.iter()) {
        *xi += di;
    }
    let mean = x.to_state(belief.mean.joint_count())?;
    Belief::new(mean, covariance, belief.velocity)
}

/// Mean increment `K·y` and posterior covariance `(I − K·H)·Σ` for a
/// two-row observation with isotropic noise variance `r`.
pub fn kalman_correction(
    sigma: &DMatrix<f64>,
    h: &JacobianMatrix,
    y: (f64, f64),
    r: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = sigma.nrows();
    if h.ncols() != d {
        return Err(Error::dim("observation Jacobian", d, h.ncols()));
    }
    let sh_t = sigma * h.transpose();
    let hsh = h * &sh_t;
    let s = Matrix2::new(hsh[(0, 0)] + r, hsh[(0, 1)], hsh[(1, 0)], hsh[(1, 1)] + r);
    let s_inv = invert_innovation(&s)?;
    let gain = &sh_t * s_inv;
    let dx = &gain * Vector2::new(y.0, y.1);
    let mut post = (DMatrix::identity(d, d) - &gain * h) * sigma;
    let t = post.transpose();
    post = (post + t) * 0.5;
    Ok((dx, post))
}

fn invert_innovation(s: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = s.determinant();
    let scale = s.abs().max();
    if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale * scale {
        return Err(Error::SingularInnovation);
    }
    s.try_inverse().ok_or(Error::SingularInnovation)
}

/// Outcome of a refinement run.
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub state: RobotState,
    /// Loss at the input state.
    pub initial_loss: f64,
    /// Loss at the returned state.
    pub final_loss: f64,
}

/// Adam descent on the mask loss with fresh optimizer state.
pub fn refine(
    state: &RobotState,
    reference: &BinaryMask,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    cfg: &EstimatorConfig,
) -> Result<Refinement> {
    let joints = state.joint_count();
    let mut x = StateVector::from_state(state);
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut current = state.clone();
    let mut initial_loss = None;
    for t in 1..=cfg.refine_steps {
        let (loss, grad) = gradients::loss_and_gradient(
            cfg.backend,
            &current,
            reference,
            model,
            cam,
            &cfg.render,
            &cfg.fd_steps,
        )?;
        initial_loss.get_or_insert(loss);
        let c1 = 1.0 - cfg.adam_beta1.powi(t as i32);
        let c2 = 1.0 - cfg.adam_beta2.powi(t as i32);
        for i in 0..x.len() {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
            let step = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            x.0[i] -= cfg.refine_lr * step;
        }
        current = x.to_state(joints)?;
        model.clamp_joints(&mut current.theta);
        x = StateVector::from_state(&current);
    }
    let final_loss = gradients::mask_loss(&render_robot_soft(model, &current, cam, &cfg.render)?, reference)?;
    Ok(Refinement {
        state: current,
        initial_loss: initial_loss.unwrap_or(final_loss),
        final_loss,
    })
}

/// Base velocity from consecutive posterior positions.
pub fn update_velocity(b_now: &Vec3, b_prev: &Vec3, dt: f64) -> Result<Vec3> {
    check_dt(dt)?;
    Ok((b_now - b_prev) / dt)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("dt must be positive, got {dt}")))
    }
}

/// Why the centroid update was not applied on a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    /// The observed mask has no set pixels.
    EmptyReference,
    /// The render at the prediction (or one of its probes) is empty.
    EmptyPrediction,
}

/// Everything one call to [`step`] produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub belief: Belief,
    /// Observed minus predicted centroid, when the update ran.
    pub residual: Option<(f64, f64)>,
    /// Mask loss after refinement, when refinement ran.
    pub loss: Option<f64>,
    pub skipped: Option<SkipReason>,
}

/// One full estimation cycle on a new observed mask.
pub fn step(
    belief: &Belief,
    reference: &BinaryMask,
    dt: f64,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    cfg: &EstimatorConfig,
) -> Result<StepOutcome> {
    check_dt(dt)?;
    cycle(belief, reference, Some(dt), model, cam, cfg)
}

/// `dt = None` marks the first frame: no prediction, and the velocity stays
/// zero because there is no earlier posterior to difference against.
fn cycle(
    belief: &Belief,
    reference: &BinaryMask,
    dt: Option<f64>,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    cfg: &EstimatorConfig,
) -> Result<StepOutcome> {
    if reference.width() != cam.width || reference.height() != cam.height {
        return Err(Error::dim(
            "reference mask",
            cam.width * cam.height,
            reference.width() * reference.height(),
        ));
    }
    let prior = match dt {
        Some(dt) => predict(belief, dt, cfg)?,
        None => belief.clone(),
    };
    let b_prev = belief.mean.pose.translation;

    let obs = match Observation::from_mask(reference) {
        Ok(obs) => obs,
        Err(Error::EmptyMask) => {
            log::warn!("empty reference mask: carrying the prediction forward");
            let mut out = prior;
            out.velocity = Vec3::zeros();
            return Ok(StepOutcome {
                belief: out,
                residual: None,
                loss: None,
                skipped: Some(SkipReason::EmptyReference),
            });
        }
        Err(e) => return Err(e),
    };

    let observed = gradients::observe(cfg.backend, &prior.mean, model, cam, &cfg.render, &cfg.fd_steps);
    let (mut post, residual, skipped) = match observed {
        Ok((predicted, h)) => {
            let mut post = ekf_update(&prior, &obs, predicted, &h, cfg)?;
            model.clamp_joints(&mut post.mean.theta);
            let y = (obs.m.0 - predicted.0, obs.m.1 - predicted.1);
            (post, Some(y), None)
        }
        Err(Error::EmptySilhouette { .. } | Error::Unobservable { .. }) => {
            log::warn!("prediction renders empty: skipping the centroid update");
            (prior, None, Some(SkipReason::EmptyPrediction))
        }
        Err(e) => return Err(e),
    };

    let refined = refine(&post.mean, reference, model, cam, cfg)?;
    post.mean = refined.state;
    post.velocity = match dt {
        Some(dt) => update_velocity(&post.mean.pose.translation, &b_prev, dt)?,
        None => Vec3::zeros(),
    };
    Ok(StepOutcome {
        belief: post,
        residual,
        loss: Some(refined.final_loss),
        skipped,
    })
}

/// Runs [`step`] over a timestamped mask stream.
#[derive(Clone, Debug)]
pub struct Tracker<'a> {
    belief: Belief,
    last_t: Option<f64>,
    model: &'a RobotModel,
    cam: &'a CameraIntrinsics,
    cfg: &'a EstimatorConfig,
}

impl<'a> Tracker<'a> {
    pub fn new(
        initial: Belief,
        model: &'a RobotModel,
        cam: &'a CameraIntrinsics,
        cfg: &'a EstimatorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if initial.dim() != model.state_dim() {
            return Err(Error::dim("initial belief", model.state_dim(), initial.dim()));
        }
        Ok(Self {
            belief: initial,
            last_t: None,
            model,
            cam,
            cfg,
        })
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    /// Consumes the mask observed at time `t`; timestamps must increase.
    pub fn process(&mut self, t: f64, reference: &BinaryMask) -> Result<StepOutcome> {
        let dt = match self.last_t {
            None => None,
            Some(prev) => {
                let dt = t - prev;
                check_dt(dt)?;
                Some(dt)
            }
        };
        let out = cycle(&self.belief, reference, dt, self.model, self.cam, self.cfg)?;
        self.belief = out.belief.clone();
        self.last_t = Some(t);
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
