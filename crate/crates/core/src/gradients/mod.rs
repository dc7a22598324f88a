//! Derivatives of the rendering pipeline with respect to the state vector.
//!
//! Central finite differences are the reference backend. The analytic
//! backend in [`analytic`] differentiates the same soft rasterizer in
//! closed form and is held to the finite-difference results in tests.

pub mod analytic;

use nalgebra::{Matrix2xX, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::masks::BinaryMask;
use crate::renderer::{centroid, render_robot_soft, RenderSettings, SoftMask};
use crate::types::{CameraIntrinsics, RobotState, StateVector};

/// ∂m̂/∂x, two rows (u, v) by D columns in state-vector order.
pub type JacobianMatrix = Matrix2xX<f64>;

/// Per-block central-difference step sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdSteps {
    pub step_theta: f64,
    pub step_quat: f64,
    pub step_trans: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            step_theta: 1e-3,
            step_quat: 1e-3,
            step_trans: 1e-3,
        }
    }
}

impl FdSteps {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step_theta", self.step_theta),
            ("step_quat", self.step_quat),
            ("step_trans", self.step_trans),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            step_theta: self.step_theta * factor,
            step_quat: self.step_quat * factor,
            step_trans: self.step_trans * factor,
        }
    }

    /// Step for state-vector component `k` of a model with `joints` joints.
    pub fn for_component(&self, joints: usize, k: usize) -> f64 {
        if k < joints {
            self.step_theta
        } else if k < joints + 4 {
            self.step_quat
        } else {
            self.step_trans
        }
    }
}

/// Which derivative implementation the estimator uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientBackend {
    FiniteDifference,
    #[default]
    Analytic,
}

/// Adds `delta` to component `k` of the flattened state, renormalizing
/// the quaternion exactly as the estimator's updates do.
pub fn perturb_component(state: &RobotState, k: usize, delta: f64) -> Result<RobotState> {
    let mut v = StateVector::from_state(state);
    v.0[k] += delta;
    v.to_state(state.joint_count())
}

/// `ℒ = Σ (𝕄^pred − 𝕄^ref)²` over all pixels.
pub fn mask_loss(pred: &SoftMask, reference: &BinaryMask) -> Result<f64> {
    if pred.width() != reference.width() || pred.height() != reference.height() {
        return Err(Error::dim(
            "mask loss inputs",
            pred.width() * pred.height(),
            reference.width() * reference.height(),
        ));
    }
    Ok(pred
        .values()
        .iter()
        .zip(reference.bits())
        .map(|(&p, &r)| {
            let d = p - if r { 1.0 } else { 0.0 };
            d * d
        })
        .sum())
}

fn probe_states(state: &RobotState, steps: &FdSteps) -> Result<Vec<(usize, f64, RobotState)>> {
    let joints = state.joint_count();
    let mut out = Vec::with_capacity(2 * state.dim());
    for k in 0..state.dim() {
        let h = steps.for_component(joints, k);
        out.push((k, h, perturb_component(state, k, h)?));
        out.push((k, h, perturb_component(state, k, -h)?));
    }
    Ok(out)
}

/// Central-difference centroid Jacobian.
pub fn centroid_jacobian(
    state: &RobotState,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    steps: &FdSteps,
) -> Result<JacobianMatrix> {
    let probes = probe_states(state, steps)?;
    let centroids: Vec<Result<(f64, f64)>> = probes
        .par_iter()
        .map(|(k, _, s)| {
            let mask = render_robot_soft(model, s, cam, settings)?;
            centroid(&mask).map_err(|e| match e {
                Error::EmptySilhouette { .. } => Error::Unobservable { component: *k },
                other => other,
            })
        })
        .collect();
    let mut jac = JacobianMatrix::zeros(state.dim());
    for (pair, chunk) in probes.chunks(2).zip(centroids.chunks(2)) {
        let (k, h, _) = pair[0];
        let plus = chunk[0].as_ref().map_err(clone_err)?;
        let minus = chunk[1].as_ref().map_err(clone_err)?;
        jac.set_column(
            k,
            &Vector2::new((plus.0 - minus.0) / (2.0 * h), (plus.1 - minus.1) / (2.0 * h)),
        );
    }
    Ok(jac)
}

/// Central-difference gradient of `mask_loss ∘ render`.
pub fn mask_loss_gradient(
    state: &RobotState,
    reference: &BinaryMask,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    steps: &FdSteps,
) -> Result<Vec<f64>> {
    let probes = probe_states(state, steps)?;
    let losses: Vec<Result<f64>> = probes
        .par_iter()
        .map(|(_, _, s)| mask_loss(&render_robot_soft(model, s, cam, settings)?, reference))
        .collect();
    let mut grad = vec![0.0; state.dim()];
    for (pair, chunk) in probes.chunks(2).zip(losses.chunks(2)) {
        let (k, h, _) = pair[0];
        let plus = *chunk[0].as_ref().map_err(clone_err)?;
        let minus = *chunk[1].as_ref().map_err(clone_err)?;
        grad[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

// Errors from parallel probes are reported by reference; rebuild an owned one.
fn clone_err(e: &Error) -> Error {
    match e {
        Error::Dimension {
            what,
            expected,
            actual,
        } => Error::Dimension {
            what,
            expected: *expected,
            actual: *actual,
        },
        Error::Unobservable { component } => Error::Unobservable {
            component: *component,
        },
        Error::EmptySilhouette { mass } => Error::EmptySilhouette { mass: *mass },
        other => Error::Parameter(other.to_string()),
    }
}

/// Predicted centroid and its Jacobian at `state`.
pub fn observe(
    backend: GradientBackend,
    state: &RobotState,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    steps: &FdSteps,
) -> Result<((f64, f64), JacobianMatrix)> {
    match backend {
        GradientBackend::Analytic => analytic::centroid_and_jacobian(state, model, cam, settings),
        GradientBackend::FiniteDifference => {
            let mask = render_robot_soft(model, state, cam, settings)?;
            let c = centroid(&mask)?;
            Ok((c, centroid_jacobian(state, model, cam, settings, steps)?))
        }
    }
}

/// Mask loss and its gradient at `state`.
pub fn loss_and_gradient(
    backend: GradientBackend,
    state: &RobotState,
    reference: &BinaryMask,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    steps: &FdSteps,
) -> Result<(f64, Vec<f64>)> {
    match backend {
        GradientBackend::Analytic => analytic::loss_and_gradient(state, reference, model, cam, settings),
        GradientBackend::FiniteDifference => {
            let loss = mask_loss(&render_robot_soft(model, state, cam, settings)?, reference)?;
            let grad = mask_loss_gradient(state, reference, model, cam, settings, steps)?;
            Ok((loss, grad))
        }
    }
}

#[cfg(test)]
mod tests;
