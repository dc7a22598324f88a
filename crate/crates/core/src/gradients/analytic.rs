//! Closed-form derivatives of the soft rasterizer.
//!
//! Reverse pass: pixel weights → per-face coverage → signed distance →
//! projected vertex positions → camera-frame points → (b, q, θ).

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, reconstruct_mesh, RobotModel};
use crate::masks::BinaryMask;
use crate::renderer::{
    pixel_span, robot_primitives, soft_transmittance, EdgePoly, EdgeProfile, RenderSettings, SoftMask,
    EMPTY_MASS_EPS,
};
use crate::types::{CameraIntrinsics, Mat3, RobotState, TriMesh, Vec3};

use super::JacobianMatrix;

struct ForwardPass {
    mesh: TriMesh,
    cam_points: Vec<Vec3>,
    prims: Vec<EdgePoly>,
    keep: Vec<f64>,
}

impl ForwardPass {
    fn run(
        state: &RobotState,
        model: &RobotModel,
        cam: &CameraIntrinsics,
        settings: &RenderSettings,
    ) -> Result<Self> {
        let mesh = reconstruct_mesh(model, &state.theta)?;
        let prims = robot_primitives(model, cam, &state.pose, &mesh, settings);
        let keep = soft_transmittance(&prims, cam.width, cam.height, settings);
        let r = state.pose.rotation.to_matrix();
        let cam_points = mesh.vertices.iter().map(|p| r * p + state.pose.translation).collect();
        Ok(Self {
            mesh,
            cam_points,
            prims,
            keep,
        })
    }

    fn mask(&self, cam: &CameraIntrinsics) -> SoftMask {
        SoftMask::from_values(cam.width, cam.height, self.keep.iter().map(|k| 1.0 - k).collect())
            .expect("transmittance lies in [0, 1]")
    }

    /// Gradients of `K` pixel-weighted sums `Σ_p w_o(p)·M(p)` with respect
    /// to every projected vertex position.
    fn image_gradients<const K: usize>(
        &self,
        cam: &CameraIntrinsics,
        settings: &RenderSettings,
        weight: impl Fn(usize, usize, f64) -> [f64; K],
    ) -> Vec<[[f64; 2]; K]> {
        let profile = EdgeProfile::new(settings);
        let reach = settings.reach();
        let (w, h) = (cam.width, cam.height);
        let mut grad = vec![[[0.0; 2]; K]; self.mesh.vertices.len()];
        for prim in &self.prims {
            let n = prim.len();
            let (x0, y0, x1, y1) = prim.bounds();
            let (Some((u0, u1)), Some((v0, v1))) = (
                pixel_span(x0 - reach, x1 + reach, w),
                pixel_span(y0 - reach, y1 + reach, h),
            ) else {
                continue;
            };
            let mut acc = vec![[[0.0; 2]; K]; n];
            for v in v0..=v1 {
                let py = v as f64 + 0.5;
                for u in u0..=u1 {
                    let px = u as f64 + 0.5;
                    let l = prim.min_line_distance(px, py);
                    if l <= -reach || l >= reach {
                        continue;
                    }
                    let (d, edge, t, c) = prim.signed_distance(px, py);
                    let slope = profile.derivative(d);
                    if slope == 0.0 || d == 0.0 {
                        continue;
                    }
                    let cover = profile.value(d);
                    let idx = v * w + u;
                    // ∂M/∂D_f = ∏_{g≠f} (1 − D_g)
                    let others = self.keep[idx] / (1.0 - cover);
                    if others == 0.0 {
                        continue;
                    }
                    let m = 1.0 - self.keep[idx];
                    let wts = weight(u, v, m);
                    let dist = d.abs();
                    let sign = d.signum();
                    let nrm = [(px - c[0]) / dist, (py - c[1]) / dist];
                    let base = others * slope;
                    // ∂d/∂a = −s(1−t)n̂, ∂d/∂b = −s·t·n̂
                    let coef_a = -sign * (1.0 - t) * base;
                    let coef_b = -sign * t * base;
                    let (ia, ib) = (edge, (edge + 1) % n);
                    for o in 0..K {
                        if wts[o] == 0.0 {
                            continue;
                        }
                        for axis in 0..2 {
                            acc[ia][o][axis] += wts[o] * coef_a * nrm[axis];
                            acc[ib][o][axis] += wts[o] * coef_b * nrm[axis];
                        }
                    }
                }
            }
            for slot in 0..n {
                let vert = prim.src[slot];
                for o in 0..K {
                    grad[vert][o][0] += acc[slot][o][0];
                    grad[vert][o][1] += acc[slot][o][1];
                }
            }
        }
        grad
    }

    /// Chains per-vertex image gradients through projection, base pose and
    /// forward kinematics into state-vector gradients.
    fn state_gradients<const K: usize>(
        &self,
        image_grad: &[[[f64; 2]; K]],
        state: &RobotState,
        model: &RobotModel,
        cam: &CameraIntrinsics,
    ) -> Result<[Vec<f64>; K]> {
        let n = model.joint_count();
        let vpl = model.vertices_per_link();
        let frames = forward_kinematics(model, &state.theta)?;
        let rot = state.pose.rotation.to_matrix();
        let rot_t = rot.transpose();

        let mut d_trans = [Vec3::zeros(); K];
        let mut outer = [Mat3::zeros(); K];
        let mut link_force = vec![[Vec3::zeros(); K]; n];
        let mut link_torque = vec![[Vec3::zeros(); K]; n];

        for (vi, g2) in image_grad.iter().enumerate() {
            if g2.iter().all(|g| g[0] == 0.0 && g[1] == 0.0) {
                continue;
            }
            let pc = self.cam_points[vi];
            let pb = self.mesh.vertices[vi];
            let iz = 1.0 / pc.z;
            let link = vi / vpl;
            for o in 0..K {
                let [gu, gv] = g2[o];
                let gc = Vec3::new(
                    gu * cam.fx * iz,
                    gv * cam.fy * iz,
                    -(gu * cam.fx * pc.x + gv * cam.fy * pc.y) * iz * iz,
                );
                d_trans[o] += gc;
                outer[o] += gc * pb.transpose();
                let gb = rot_t * gc;
                link_force[link][o] += gb;
                link_torque[link][o] += pb.cross(&gb);
            }
        }

        let q = state.pose.rotation.to_array();
        let partials = state.pose.rotation.matrix_partials();
        let mut out: [Vec<f64>; K] = std::array::from_fn(|_| vec![0.0; n + 7]);
        for o in 0..K {
            let g = &mut out[o];
            // suffix sums over links k ≥ j
            let (mut force, mut torque) = (Vec3::zeros(), Vec3::zeros());
            for j in (0..n).rev() {
                force += link_force[j][o];
                torque += link_torque[j][o];
                let axis = frames[j].rotation.rotate(&model.links[j].joint_axis.unit());
                let origin = frames[j].translation;
                g[j] = axis.dot(&(torque - origin.cross(&force)));
            }
            let dn: [f64; 4] = std::array::from_fn(|l| partials[l].component_mul(&outer[o]).sum());
            // renormalization: ∂n/∂q̃ = I − n nᵀ at unit norm
            let radial: f64 = (0..4).map(|l| dn[l] * q[l]).sum();
            for k in 0..4 {
                g[n + k] = dn[k] - radial * q[k];
            }
            for a in 0..3 {
                g[n + 4 + a] = d_trans[o][a];
            }
        }
        Ok(out)
    }
}

/// Rendered soft mask with the mask loss and its gradient.
pub fn render_loss_and_gradient(
    state: &RobotState,
    reference: &BinaryMask,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<(SoftMask, f64, Vec<f64>)> {
    if reference.width() != cam.width || reference.height() != cam.height {
        return Err(Error::dim(
            "reference mask",
            cam.width * cam.height,
            reference.width() * reference.height(),
        ));
    }
    let fwd = ForwardPass::run(state, model, cam, settings)?;
    let mask = fwd.mask(cam);
    let loss = super::mask_loss(&mask, reference)?;
    let w = cam.width;
    let bits = reference.bits();
    let img = fwd.image_gradients::<1>(cam, settings, |u, v, m| {
        let r = if bits[v * w + u] { 1.0 } else { 0.0 };
        [2.0 * (m - r)]
    });
    let [grad] = fwd.state_gradients(&img, state, model, cam)?;
    Ok((mask, loss, grad))
}

pub fn loss_and_gradient(
    state: &RobotState,
    reference: &BinaryMask,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<(f64, Vec<f64>)> {
    let (_, loss, grad) = render_loss_and_gradient(state, reference, model, cam, settings)?;
    Ok((loss, grad))
}

/// Centroid of the soft silhouette and its 2×D Jacobian.
pub fn centroid_and_jacobian(
    state: &RobotState,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<((f64, f64), JacobianMatrix)> {
    let fwd = ForwardPass::run(state, model, cam, settings)?;
    let [m00, m10, m01] = crate::renderer::low_order_moments(&fwd.mask(cam));
    if m00 <= EMPTY_MASS_EPS {
        return Err(Error::EmptySilhouette { mass: m00 });
    }
    let img = fwd.image_gradients::<3>(cam, settings, |u, v, _| [1.0, u as f64, v as f64]);
    let [g00, g10, g01] = fwd.state_gradients(&img, state, model, cam)?;
    let d = state.dim();
    let mut jac = JacobianMatrix::zeros(d);
    for k in 0..d {
        jac[(0, k)] = (g10[k] * m00 - m10 * g00[k]) / (m00 * m00);
        jac[(1, k)] = (g01[k] * m00 - m01 * g00[k]) / (m00 * m00);
    }
    Ok(((m10 / m00, m01 / m00), jac))
}
