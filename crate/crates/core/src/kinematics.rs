//! Serpentine robot model: a serial chain of capped cylinders joined by
//! alternating single-axis revolute joints.
//!
//! Link `k` has frame `A_k` with `A_1 = Rot(axis₁, θ₁)` and
//! `A_k = A_{k−1} ∘ Trans(L_{k−1}·x̂) ∘ Rot(axis_k, θ_k)`. The cylinder of
//! link `k` spans `[0, L_k]` along the local +x axis of `A_k`.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Pose, TriMesh, UnitQuaternion, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointAxis {
    /// Rotation about local y.
    Pitch,
    /// Rotation about local z.
    Yaw,
}

impl JointAxis {
    pub fn unit(self) -> Vec3 {
        match self {
            JointAxis::Pitch => Vec3::y(),
            JointAxis::Yaw => Vec3::z(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub length: f64,
    pub radius: f64,
    #[serde(rename = "axis")]
    pub joint_axis: JointAxis,
}

impl LinkSpec {
    pub fn new(length: f64, radius: f64, joint_axis: JointAxis) -> Result<Self> {
        let l = Self {
            length,
            radius,
            joint_axis,
        };
        l.validate()?;
        Ok(l)
    }

    fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::Parameter(format!("link length {} must be positive", self.length)));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Parameter(format!("link radius {} must be positive", self.radius)));
        }
        Ok(())
    }
}

fn default_segments() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub links: Vec<LinkSpec>,
    #[serde(default = "default_segments")]
    pub mesh_segments: usize,
    /// Symmetric joint limit in radians applied after estimator updates.
    /// `None` disables clamping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_limit: Option<f64>,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::serpentine(6, 0.15, 0.04)
    }
}

impl RobotModel {
    pub fn new(links: Vec<LinkSpec>, mesh_segments: usize) -> Result<Self> {
        let m = Self {
            links,
            mesh_segments,
            joint_limit: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// `n` identical links with joints alternating pitch, yaw, pitch, ...
    pub fn serpentine(n: usize, length: f64, radius: f64) -> Self {
        let links = (0..n)
            .map(|k| LinkSpec {
                length,
                radius,
                joint_axis: if k % 2 == 0 { JointAxis::Pitch } else { JointAxis::Yaw },
            })
            .collect();
        Self {
            links,
            mesh_segments: default_segments(),
            joint_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::Parameter("robot model needs at least one link".into()));
        }
        if self.mesh_segments < 3 {
            return Err(Error::Parameter(format!(
                "mesh_segments must be >= 3, got {}",
                self.mesh_segments
            )));
        }
        for l in &self.links {
            l.validate()?;
        }
        if let Some(lim) = self.joint_limit {
            if !(lim.is_finite() && lim > 0.0) {
                return Err(Error::Parameter(format!("joint_limit {lim} must be positive")));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.links.len()
    }

    pub fn state_dim(&self) -> usize {
        self.links.len() + 7
    }

    pub fn total_length(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn vertices_per_link(&self) -> usize {
        2 * self.mesh_segments + 2
    }

    pub fn faces_per_link(&self) -> usize {
        4 * self.mesh_segments
    }

    pub fn clamp_joints(&self, theta: &mut [f64]) {
        if let Some(lim) = self.joint_limit {
            for t in theta {
                *t = t.clamp(-lim, lim);
            }
        }
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let m: RobotModel = toml::from_str(text).map_err(|e| e.to_string())?;
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|m| Error::format(path, m))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("robot model serializes")
    }
}

/// Link frames `[A_1 … A_N]` in the robot base frame.
pub fn forward_kinematics(model: &RobotModel, theta: &[f64]) -> Result<Vec<Pose>> {
    let n = model.joint_count();
    if theta.len() != n {
        return Err(Error::dim("joint angles", n, theta.len()));
    }
    let mut frames = Vec::with_capacity(n);
    let mut prev: Option<Pose> = None;
    for (k, (link, &angle)) in model.links.iter().zip(theta).enumerate() {
        let rot = Pose::from_rotation(UnitQuaternion::from_axis_angle(&link.joint_axis.unit(), angle));
        let frame = match prev {
            None => rot,
            Some(p) => {
                let step = Pose::from_translation(Vec3::new(model.links[k - 1].length, 0.0, 0.0));
                p.compose(&step).compose(&rot)
            }
        };
        frames.push(frame);
        prev = Some(frame);
    }
    Ok(frames)
}

/// Base-frame positions of the chain: the base origin followed by the
/// distal endpoint of every link (N + 1 points).
pub fn skeleton_points(model: &RobotModel, theta: &[f64]) -> Result<Vec<Vec3>> {
    let frames = forward_kinematics(model, theta)?;
    let mut pts = Vec::with_capacity(frames.len() + 1);
    pts.push(Vec3::zeros());
    for (f, l) in frames.iter().zip(&model.links) {
        pts.push(f.apply(&Vec3::new(l.length, 0.0, 0.0)));
    }
    Ok(pts)
}

/// Closed cylinder along local +x from `x = 0` to `x = length`.
///
/// Layout: ring at `x = 0` (indices `0..S`), ring at `x = length`
/// (`S..2S`), then the two cap centers (`2S`, `2S + 1`). Faces wind
/// counter-clockwise seen from outside.
pub fn cylinder_mesh(radius: f64, length: f64, segments: usize) -> Result<TriMesh> {
    if !(radius.is_finite() && radius > 0.0 && length.is_finite() && length > 0.0) {
        return Err(Error::Parameter(format!(
            "cylinder needs positive radius and length, got r={radius}, L={length}"
        )));
    }
    if segments < 3 {
        return Err(Error::Parameter(format!("cylinder needs >= 3 segments, got {segments}")));
    }
    let s = segments;
    let mut vertices = Vec::with_capacity(2 * s + 2);
    for x in [0.0, length] {
        for j in 0..s {
            let (sn, cs) = (TAU * j as f64 / s as f64).sin_cos();
            vertices.push(Vec3::new(x, radius * cs, radius * sn));
        }
    }
    vertices.push(Vec3::zeros());
    vertices.push(Vec3::new(length, 0.0, 0.0));
    let (c0, c1) = (2 * s, 2 * s + 1);

    let mut faces = Vec::with_capacity(4 * s);
    for j in 0..s {
        let j1 = (j + 1) % s;
        faces.push([j, j1, s + j1]);
        faces.push([j, s + j1, s + j]);
    }
    for j in 0..s {
        let j1 = (j + 1) % s;
        faces.push([c0, j1, j]);
        faces.push([c1, s + j, s + j1]);
    }
    TriMesh::new(vertices, faces)
}

/// Full robot mesh in the base frame.
pub fn reconstruct_mesh(model: &RobotModel, theta: &[f64]) -> Result<TriMesh> {
    let frames = forward_kinematics(model, theta)?;
    let mut mesh = TriMesh::default();
    for (frame, link) in frames.iter().zip(&model.links) {
        let mut part = cylinder_mesh(link.radius, link.length, model.mesh_segments)?;
        for v in &mut part.vertices {
            *v = frame.apply(v);
        }
        mesh.append(&part);
    }
    Ok(mesh)
}
