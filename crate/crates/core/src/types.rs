//! Geometric and probabilistic value types shared across the pipeline.
//!
//! Units are fixed everywhere: radians, meters, pixels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Unit quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)`. Fails for zero or non-finite input.
    /// Input that is already unit to rounding is returned bit-for-bit.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { w, x, y, z });
        }
        let n = n2.sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Parameter(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::new_normalize(q[0], q[1], q[2], q[3])
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Re-projects onto the unit sphere. Idempotent.
    pub fn renormalize(&self) -> Self {
        Self::new_normalize(self.w, self.x, self.y, self.z).unwrap_or_default()
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Self {
            w: aw * bw - ax * bx - ay * by - az * bz,
            x: aw * bx + ax * bw + ay * bz - az * by,
            y: aw * by - ax * bz + ay * bw + az * bx,
            z: aw * bz + ax * by - ay * bx + az * bw,
        }
        .renormalize()
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Partial derivatives of the `to_matrix` polynomial with respect to
    /// (w, x, y, z), evaluated at this quaternion.
    pub fn matrix_partials(&self) -> [Mat3; 4] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let dw = Mat3::new(
            0.0, -2.0 * z, 2.0 * y, //
            2.0 * z, 0.0, -2.0 * x, //
            -2.0 * y, 2.0 * x, 0.0,
        );
        let dx = Mat3::new(
            0.0, 2.0 * y, 2.0 * z, //
            2.0 * y, -4.0 * x, -2.0 * w, //
            2.0 * z, 2.0 * w, -4.0 * x,
        );
        let dy = Mat3::new(
            -4.0 * y, 2.0 * x, 2.0 * w, //
            2.0 * x, 0.0, 2.0 * z, //
            -2.0 * w, 2.0 * z, -4.0 * y,
        );
        let dz = Mat3::new(
            -4.0 * z, -2.0 * w, 2.0 * x, //
            2.0 * w, -4.0 * z, 2.0 * y, //
            2.0 * x, 2.0 * y, 0.0,
        );
        [dw, dx, dy, dz]
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_matrix() * v
    }
}

/// Rigid transform: `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(q: UnitQuaternion) -> Self {
        Self::new(q, Vec3::zeros())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.conjugate();
        Pose {
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }
}

/// Joint angles plus the camera-frame base pose.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub theta: Vec<f64>,
    pub pose: Pose,
}

impl RobotState {
    pub fn new(theta: Vec<f64>, pose: Pose) -> Self {
        Self { theta, pose }
    }

    pub fn zeros(joints: usize) -> Self {
        Self::new(vec![0.0; joints], Pose::identity())
    }

    pub fn joint_count(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len() + 7
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_state(self)
    }
}

/// Flat state layout `[θ₁…θ_N, q_w, q_x, q_y, q_z, b_x, b_y, b_z]`.
///
/// Every covariance, Jacobian and gradient in the crate indexes with this
/// layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn from_state(s: &RobotState) -> Self {
        let mut v = Vec::with_capacity(s.dim());
        v.extend_from_slice(&s.theta);
        v.extend_from_slice(&s.pose.rotation.to_array());
        v.extend_from_slice(s.pose.translation.as_slice());
        StateVector(v)
    }

    /// Rebuilds the state, renormalizing the quaternion block.
    pub fn to_state(&self, joints: usize) -> Result<RobotState> {
        let d = joints + 7;
        if self.0.len() != d {
            return Err(Error::dim("state vector", d, self.0.len()));
        }
        let v = &self.0;
        let q = UnitQuaternion::new_normalize(v[joints], v[joints + 1], v[joints + 2], v[joints + 3])?;
        let t = Vec3::new(v[joints + 4], v[joints + 5], v[joints + 6]);
        Ok(RobotState::new(v[..joints].to_vec(), Pose::new(q, t)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn quat_offset(joints: usize) -> usize {
        joints
    }

    pub fn trans_offset(joints: usize) -> usize {
        joints + 4
    }
}

/// Gaussian belief over the flattened state plus the base velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub mean: RobotState,
    pub covariance: DMatrix<f64>,
    pub velocity: Vec3,
}

impl Belief {
    pub fn new(mean: RobotState, covariance: DMatrix<f64>, velocity: Vec3) -> Result<Self> {
        let d = mean.dim();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::dim("covariance", d, covariance.nrows()));
        }
        let mut b = Self {
            mean,
            covariance,
            velocity,
        };
        b.symmetrize();
        Ok(b)
    }

    /// Diagonal covariance with per-block standard deviations.
    pub fn with_block_std(
        mean: RobotState,
        joint_std: f64,
        quat_std: f64,
        trans_std: f64,
    ) -> Self {
        let n = mean.joint_count();
        let diag: Vec<f64> = (0..n + 7)
            .map(|i| {
                let s = if i < n {
                    joint_std
                } else if i < n + 4 {
                    quat_std
                } else {
                    trans_std
                };
                s * s
            })
            .collect();
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        Self {
            mean,
            covariance: cov,
            velocity: Vec3::zeros(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn symmetrize(&mut self) {
        let t = self.covariance.transpose();
        self.covariance = (&self.covariance + t) * 0.5;
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.covariance
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pinhole intrinsics; also fixes the image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Parameter("camera focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Parameter("camera image size must be positive".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::Parameter(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// 640×360 working resolution with a 500 px focal length.
    pub fn working_default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 180.0,
            width: 640,
            height: 360,
        }
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::working_default()
    }
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for f in &faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Parameter(format!("face {f:?} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Parameter(format!("degenerate face {f:?}")));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Parameter("non-finite vertex".into()));
        }
        Ok(Self { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0]];
                let b = self.vertices[f[1]];
                let c = self.vertices[f[2]];
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Appends `other` with its face indices offset.
    pub fn append(&mut self, other: &TriMesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        assert_abs_diff_eq!(UnitQuaternion::identity().to_matrix(), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = UnitQuaternion::new_normalize(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2).unwrap();
        let r = q.to_matrix() * Vec3::x();
        assert_abs_diff_eq!(r, Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn compose_translation_after_rotation() {
        let a = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let b = Pose::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2));
        let p = a.compose(&b).apply(&Vec3::x());
        assert_abs_diff_eq!(p, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pose_identity_and_inverse() {
        let p = Pose::new(
            UnitQuaternion::new_normalize(0.3, -0.5, 0.7, 0.1).unwrap(),
            Vec3::new(0.2, -1.0, 3.0),
        );
        let id = Pose::identity().compose(&p);
        assert_abs_diff_eq!(id.translation, p.translation, epsilon = 1e-12);
        let e = p.compose(&p.inverse());
        assert_abs_diff_eq!(e.translation, Vec3::zeros(), epsilon = 1e-9);
        assert_abs_diff_eq!(e.rotation.to_matrix(), Mat3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn state_vector_layout() {
        let s = RobotState::zeros(3);
        assert_eq!(
            s.to_vector().0,
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn state_vector_renormalizes_quaternion() {
        let v = StateVector(vec![0.5, 2.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let s = v.to_state(1).unwrap();
        assert_eq!(s.pose.rotation.to_array(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn state_vector_length_mismatch() {
        let v = StateVector(vec![0.0; 9]);
        assert!(matches!(v.to_state(3), Err(Error::Dimension { .. })));
    }

    #[test]
    fn camera_rejects_bad_principal_point() {
        assert!(CameraIntrinsics::new(500.0, 500.0, 640.0, 10.0, 640, 360).is_err());
        assert!(CameraIntrinsics::new(-1.0, 500.0, 10.0, 10.0, 640, 360).is_err());
    }

    #[test]
    fn mesh_rejects_bad_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn matrix_partials_match_finite_differences() {
        let q = UnitQuaternion::new_normalize(0.8, 0.2, -0.4, 0.3).unwrap();
        let parts = q.matrix_partials();
        let a = q.to_array();
        let h = 1e-6;
        for k in 0..4 {
            let mut p = a;
            let mut m = a;
            p[k] += h;
            m[k] -= h;
            // raw polynomial, no renormalization
            let rp = UnitQuaternion { w: p[0], x: p[1], y: p[2], z: p[3] }.to_matrix();
            let rm = UnitQuaternion { w: m[0], x: m[1], y: m[2], z: m[3] }.to_matrix();
            assert_abs_diff_eq!((rp - rm) / (2.0 * h), parts[k], epsilon = 1e-8);
        }
    }

    fn quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z).unwrap())
    }

    fn pose() -> impl Strategy<Value = Pose> {
        (quat(), -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)
            .prop_map(|(q, x, y, z)| Pose::new(q, Vec3::new(x, y, z)))
    }

    proptest! {
        #[test]
        fn rotation_matrices_are_orthonormal(q in quat()) {
            let r = q.to_matrix();
            prop_assert!((r * r.transpose() - Mat3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn renormalization_is_idempotent(q in quat()) {
            let once = q.renormalize();
            prop_assert!((once.norm() - 1.0).abs() < 1e-15);
            prop_assert_eq!(once.renormalize(), once);
            prop_assert!(q.canonical().w() >= 0.0);
        }

        #[test]
        fn compose_matches_sequential_application(a in pose(), b in pose(), c in pose(),
                                                  px in -2.0..2.0f64, py in -2.0..2.0f64, pz in -2.0..2.0f64) {
            let p = Vec3::new(px, py, pz);
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            prop_assert!((lhs - rhs).norm() < 1e-9);
            let l = a.compose(&b).compose(&c).apply(&p);
            let r = a.compose(&b.compose(&c)).apply(&p);
            prop_assert!((l - r).norm() < 1e-9);
        }

        #[test]
        fn state_vector_round_trip(theta in proptest::collection::vec(-3.0..3.0f64, 6), p in pose()) {
            let s = RobotState::new(theta, p);
            let back = s.to_vector().to_state(6).unwrap();
            prop_assert_eq!(&back.theta, &s.theta);
            prop_assert_eq!(back.pose.translation, s.pose.translation);
            for (a, b) in back.pose.rotation.to_array().iter().zip(s.pose.rotation.to_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
