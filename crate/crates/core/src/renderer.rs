//! Pinhole projection, soft and hard silhouette rasterization, and image
//! moments.
//!
//! Soft coverage of a pixel by one triangle is a sigmoid of the signed
//! Euclidean distance `d` (pixels, positive inside) from the pixel center
//! to the projected triangle boundary; faces combine as
//! `M = 1 − ∏ (1 − D_f)`. Coverage is exactly 0 for `d ≤ −support·σ` and
//! exactly 1 for `d ≥ support·σ`; in between the sigmoid is affinely
//! rescaled so that the profile is continuous at the cutoffs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{reconstruct_mesh, RobotModel};
use crate::masks::{BinaryMask, MaskView};
use crate::types::{CameraIntrinsics, Pose, RobotState, TriMesh, Vec3};

/// Mass below which a silhouette counts as empty.
pub const EMPTY_MASS_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Soft-edge scale in pixels.
    pub sigma: f64,
    /// Sigmoid half-width in units of `sigma`.
    pub support: f64,
    /// Triangles with any vertex at `z ≤ z_near` (meters) are dropped.
    pub z_near: f64,
    /// Primitive set used for robot silhouettes.
    pub coverage: Coverage,
}

/// What one soft primitive of a robot silhouette is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coverage {
    /// Every mesh triangle.
    Faces,
    /// The projected convex hull of each link's cylinder.
    #[default]
    Links,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            support: 3.0,
            z_near: 0.01,
            coverage: Coverage::default(),
        }
    }
}

impl RenderSettings {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.support >= 1.0 && self.support.is_finite()) {
            return Err(Error::Parameter(format!("support must be >= 1, got {}", self.support)));
        }
        if !(self.z_near > 0.0 && self.z_near.is_finite()) {
            return Err(Error::Parameter(format!("z_near must be positive, got {}", self.z_near)));
        }
        Ok(())
    }

    /// Half-width of the soft band in pixels.
    pub fn reach(&self) -> f64 {
        self.support * self.sigma
    }
}

/// Row-major H×W float silhouette with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dim("soft mask values", width * height, values.len()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter("soft mask values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn threshold(&self, level: f64) -> BinaryMask {
        BinaryMask::from_bits(
            self.width,
            self.height,
            self.values.iter().map(|&v| v >= level).collect(),
        )
        .expect("dimensions already valid")
    }

    /// 8-bit quantization by rounding `value · 255`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        crate::masks::write_gray_png(path, self.width, self.height, &self.to_gray8())
    }
}

impl MaskView for SoftMask {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn value_at(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

/// `(u, v, z_cam)` for each point after `X_c = R(q)·X + b`.
pub fn project_points(cam: &CameraIntrinsics, pose: &Pose, pts: &[Vec3]) -> Vec<[f64; 3]> {
    let r = pose.rotation.to_matrix();
    pts.iter()
        .map(|p| {
            let c = r * p + pose.translation;
            [cam.fx * c.x / c.z + cam.cx, cam.fy * c.y / c.z + cam.cy, c.z]
        })
        .collect()
}

pub(crate) type Tri2 = [[f64; 2]; 3];

/// Projected triangles that survive near-plane rejection and are not
/// degenerate in the image, tagged with their face index.
pub(crate) fn visible_triangles(
    projected: &[[f64; 3]],
    faces: &[[usize; 3]],
    z_near: f64,
) -> Vec<(usize, Tri2)> {
    faces
        .iter()
        .enumerate()
        .filter_map(|(fi, f)| {
            let p = [projected[f[0]], projected[f[1]], projected[f[2]]];
            if p.iter().any(|q| !(q[2] > z_near)) {
                return None;
            }
            let t = [[p[0][0], p[0][1]], [p[1][0], p[1][1]], [p[2][0], p[2][1]]];
            if signed_area2(&t).abs() < 1e-12 {
                return None;
            }
            Some((fi, t))
        })
        .collect()
}

fn signed_area2(t: &Tri2) -> f64 {
    cross(t[0], t[1], t[2])
}

#[inline]
fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex polygon prepared for distance queries: vertices in positive
/// orientation with inward unit edge normals. `src[i]` is the mesh vertex
/// behind polygon vertex `i`.
#[derive(Clone, Debug)]
pub(crate) struct EdgePoly {
    pub v: Vec<[f64; 2]>,
    pub src: Vec<usize>,
    normal: Vec<[f64; 2]>,
    offset: Vec<f64>,
}

impl EdgePoly {
    fn from_ccw(v: Vec<[f64; 2]>, src: Vec<usize>) -> Self {
        let n = v.len();
        let mut normal = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len = (ex * ex + ey * ey).sqrt();
            // left normal of a→b points inside for positive orientation
            let nrm = [-ey / len, ex / len];
            normal.push(nrm);
            offset.push(nrm[0] * a[0] + nrm[1] * a[1]);
        }
        Self { v, src, normal, offset }
    }

    pub fn triangle(t: &Tri2, face: [usize; 3]) -> Self {
        if signed_area2(t) < 0.0 {
            Self::from_ccw(vec![t[0], t[2], t[1]], vec![face[0], face[2], face[1]])
        } else {
            Self::from_ccw(t.to_vec(), face.to_vec())
        }
    }

    /// Convex hull of the given points (monotone chain); `None` when the
    /// hull has no area.
    pub fn hull(points: &[[f64; 2]], src: &[usize]) -> Option<Self> {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a][0]
                .total_cmp(&points[b][0])
                .then(points[a][1].total_cmp(&points[b][1]))
        });
        let mut chain: Vec<usize> = Vec::with_capacity(2 * points.len());
        for pass in 0..2 {
            let floor = chain.len();
            let iter: Box<dyn Iterator<Item = &usize>> =
                if pass == 0 { Box::new(order.iter()) } else { Box::new(order.iter().rev()) };
            for &i in iter {
                while chain.len() >= floor + 2
                    && cross(points[chain[chain.len() - 2]], points[chain[chain.len() - 1]], points[i]) <= 0.0
                {
                    chain.pop();
                }
                chain.push(i);
            }
            chain.pop();
        }
        if chain.len() < 3 {
            return None;
        }
        let v: Vec<[f64; 2]> = chain.iter().map(|&i| points[i]).collect();
        let area2: f64 = (1..v.len() - 1).map(|i| cross(v[0], v[i], v[i + 1])).sum();
        if area2 < 1e-12 {
            return None;
        }
        Some(Self::from_ccw(v, chain.iter().map(|&i| src[i]).collect()))
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    /// Smallest signed distance to the edge lines; positive inside.
    #[inline]
    pub fn min_line_distance(&self, px: f64, py: f64) -> f64 {
        let mut m = f64::INFINITY;
        for (n, o) in self.normal.iter().zip(&self.offset) {
            m = m.min(n[0] * px + n[1] * py - o);
        }
        m
    }

    /// Signed boundary distance plus the nearest edge (index, clamped
    /// parameter, closest point). Edge `i` runs from `v[i]` to `v[i+1]`.
    #[inline]
    pub fn signed_distance(&self, px: f64, py: f64) -> (f64, usize, f64, [f64; 2]) {
        let inside = self.min_line_distance(px, py) >= 0.0;
        let n = self.v.len();
        let mut best = (f64::INFINITY, 0usize, 0.0, [0.0, 0.0]);
        for i in 0..n {
            let a = self.v[i];
            let b = self.v[(i + 1) % n];
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let t = (((px - a[0]) * ex + (py - a[1]) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            let c = [a[0] + t * ex, a[1] + t * ey];
            let d2 = (px - c[0]) * (px - c[0]) + (py - c[1]) * (py - c[1]);
            if d2 < best.0 {
                best = (d2, i, t, c);
            }
        }
        let dist = best.0.sqrt();
        let d = if inside { dist } else { -dist };
        (d, best.1, best.2, best.3)
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.v {
            b = (b.0.min(p[0]), b.1.min(p[1]), b.2.max(p[0]), b.3.max(p[1]));
        }
        b
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Coverage profile and its derivative with respect to `d` (pixels).
#[derive(Clone, Copy, Debug)]
pub(crate) struct EdgeProfile {
    sigma: f64,
    reach: f64,
    floor: f64,
    scale: f64,
}

impl EdgeProfile {
    pub fn new(settings: &RenderSettings) -> Self {
        let floor = sigmoid(-settings.support);
        Self {
            sigma: settings.sigma,
            reach: settings.reach(),
            floor,
            scale: 1.0 / (1.0 - 2.0 * floor),
        }
    }

    #[inline]
    pub fn value(&self, d: f64) -> f64 {
        if d <= -self.reach {
            0.0
        } else if d >= self.reach {
            1.0
        } else {
            ((sigmoid(d / self.sigma) - self.floor) * self.scale).clamp(0.0, 1.0)
        }
    }

    #[inline]
    pub fn derivative(&self, d: f64) -> f64 {
        if d <= -self.reach || d >= self.reach {
            0.0
        } else {
            let s = sigmoid(d / self.sigma);
            s * (1.0 - s) * self.scale / self.sigma
        }
    }
}

/// Pixel index range whose centers fall within `[lo, hi]`.
#[inline]
pub(crate) fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).floor().min(n as f64 - 1.0);
    if end < start || !start.is_finite() || !end.is_finite() {
        None
    } else {
        Some((start as usize, end as usize))
    }
}

/// Per-pixel product `∏ (1 − D_f)` over the given primitives.
pub(crate) fn soft_transmittance(
    prims: &[EdgePoly],
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> Vec<f64> {
    let profile = EdgeProfile::new(settings);
    let reach = settings.reach();
    let mut keep = vec![1.0f64; width * height];
    for prim in prims {
        let (x0, y0, x1, y1) = prim.bounds();
        let (Some((u0, u1)), Some((v0, v1))) = (
            pixel_span(x0 - reach, x1 + reach, width),
            pixel_span(y0 - reach, y1 + reach, height),
        ) else {
            continue;
        };
        for v in v0..=v1 {
            let py = v as f64 + 0.5;
            let row = &mut keep[v * width..(v + 1) * width];
            for u in u0..=u1 {
                let k = row[u];
                if k == 0.0 {
                    continue;
                }
                let px = u as f64 + 0.5;
                let l = prim.min_line_distance(px, py);
                if l <= -reach {
                    continue;
                }
                if l >= reach {
                    row[u] = 0.0;
                    continue;
                }
                let (d, ..) = prim.signed_distance(px, py);
                let cov = profile.value(d);
                row[u] = k * (1.0 - cov);
            }
        }
    }
    keep
}

/// One primitive per visible triangle.
pub(crate) fn face_primitives(
    cam: &CameraIntrinsics,
    pose: &Pose,
    mesh: &TriMesh,
    z_near: f64,
) -> Vec<EdgePoly> {
    let projected = project_points(cam, pose, &mesh.vertices);
    visible_triangles(&projected, &mesh.faces, z_near)
        .into_iter()
        .map(|(fi, t)| EdgePoly::triangle(&t, mesh.faces[fi]))
        .collect()
}

/// One primitive per consecutive block of `part_len` vertices: the convex
/// hull of its projection. Blocks with any vertex at `z ≤ z_near` are
/// dropped.
pub(crate) fn part_primitives(
    cam: &CameraIntrinsics,
    pose: &Pose,
    mesh: &TriMesh,
    part_len: usize,
    z_near: f64,
) -> Vec<EdgePoly> {
    let projected = project_points(cam, pose, &mesh.vertices);
    let mut out = Vec::new();
    for start in (0..projected.len()).step_by(part_len.max(1)) {
        let block = &projected[start..(start + part_len).min(projected.len())];
        if block.iter().any(|q| !(q[2] > z_near)) {
            continue;
        }
        let pts: Vec<[f64; 2]> = block.iter().map(|q| [q[0], q[1]]).collect();
        let src: Vec<usize> = (start..start + block.len()).collect();
        out.extend(EdgePoly::hull(&pts, &src));
    }
    out
}

/// Primitives of the robot silhouette under the configured coverage mode.
pub(crate) fn robot_primitives(
    model: &RobotModel,
    cam: &CameraIntrinsics,
    pose: &Pose,
    mesh: &TriMesh,
    settings: &RenderSettings,
) -> Vec<EdgePoly> {
    match settings.coverage {
        Coverage::Faces => face_primitives(cam, pose, mesh, settings.z_near),
        Coverage::Links => part_primitives(cam, pose, mesh, model.vertices_per_link(), settings.z_near),
    }
}

fn soft_from_primitives(cam: &CameraIntrinsics, prims: &[EdgePoly], settings: &RenderSettings) -> SoftMask {
    let keep = soft_transmittance(prims, cam.width, cam.height, settings);
    SoftMask {
        width: cam.width,
        height: cam.height,
        values: keep.into_iter().map(|k| 1.0 - k).collect(),
    }
}

/// Differentiable silhouette of `mesh` placed at `pose` in the camera
/// frame, one soft primitive per triangle.
pub fn render_soft_silhouette(
    cam: &CameraIntrinsics,
    pose: &Pose,
    mesh: &TriMesh,
    settings: &RenderSettings,
) -> SoftMask {
    soft_from_primitives(cam, &face_primitives(cam, pose, mesh, settings.z_near), settings)
}

// Top-left tie-break for positively oriented triangles: an edge owns the
// pixel centers lying exactly on it when it points "up", or is horizontal
// and points right. A shared edge appears reversed in its neighbour, so
// ties are resolved exactly once.
#[inline]
fn owns_ties(a: [f64; 2], b: [f64; 2]) -> bool {
    let dy = b[1] - a[1];
    dy < 0.0 || (dy == 0.0 && b[0] - a[0] > 0.0)
}

pub(crate) fn rasterize_hard(tris: &[Tri2], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    for t in tris {
        let area = signed_area2(t);
        if area == 0.0 {
            continue;
        }
        let v = if area < 0.0 { [t[0], t[2], t[1]] } else { *t };
        let xs = [v[0][0], v[1][0], v[2][0]];
        let ys = [v[0][1], v[1][1], v[2][1]];
        let lo = |a: [f64; 3]| a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = |a: [f64; 3]| a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (Some((u0, u1)), Some((v0, v1))) = (
            pixel_span(lo(xs), hi(xs), width),
            pixel_span(lo(ys), hi(ys), height),
        ) else {
            continue;
        };
        let owns = [owns_ties(v[0], v[1]), owns_ties(v[1], v[2]), owns_ties(v[2], v[0])];
        for py_i in v0..=v1 {
            let py = py_i as f64 + 0.5;
            for px_i in u0..=u1 {
                let px = px_i as f64 + 0.5;
                let inside = (0..3).all(|i| {
                    let a = v[i];
                    let b = v[(i + 1) % 3];
                    let e = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
                    e > 0.0 || (e == 0.0 && owns[i])
                });
                if inside {
                    mask.set(px_i, py_i, true);
                }
            }
        }
    }
    mask
}

/// Binary silhouette: pixel centers inside any projected, non-clipped
/// triangle.
pub fn render_hard_silhouette(
    cam: &CameraIntrinsics,
    pose: &Pose,
    mesh: &TriMesh,
    z_near: f64,
) -> BinaryMask {
    let projected = project_points(cam, pose, &mesh.vertices);
    let tris: Vec<Tri2> = visible_triangles(&projected, &mesh.faces, z_near)
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    rasterize_hard(&tris, cam.width, cam.height)
}

pub fn render_robot_soft(
    model: &RobotModel,
    state: &RobotState,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<SoftMask> {
    let mesh = reconstruct_mesh(model, &state.theta)?;
    let prims = robot_primitives(model, cam, &state.pose, &mesh, settings);
    Ok(soft_from_primitives(cam, &prims, settings))
}

pub fn render_robot_hard(
    model: &RobotModel,
    state: &RobotState,
    cam: &CameraIntrinsics,
    z_near: f64,
) -> Result<BinaryMask> {
    let mesh = reconstruct_mesh(model, &state.theta)?;
    Ok(render_hard_silhouette(cam, &state.pose, &mesh, z_near))
}

/// `M_ij = Σ_u Σ_v uⁱ vʲ 𝕄(u, v)` with 0-based column `u` and row `v`.
pub fn compute_moment<M: MaskView + ?Sized>(mask: &M, i: u32, j: u32) -> f64 {
    let w = mask.width();
    let mut total = 0.0;
    for v in 0..mask.height() {
        let vj = (v as f64).powi(j as i32);
        let mut row = 0.0;
        for u in 0..w {
            let m = mask.value_at(v * w + u);
            if m != 0.0 {
                row += (u as f64).powi(i as i32) * m;
            }
        }
        total += vj * row;
    }
    total
}

/// `(M00, M10, M01)` in one pass.
pub fn low_order_moments<M: MaskView + ?Sized>(mask: &M) -> [f64; 3] {
    let w = mask.width();
    let mut m = [0.0; 3];
    for v in 0..mask.height() {
        let (mut m0, mut m1) = (0.0, 0.0);
        for u in 0..w {
            let x = mask.value_at(v * w + u);
            m0 += x;
            m1 += u as f64 * x;
        }
        m[0] += m0;
        m[1] += m1;
        m[2] += v as f64 * m0;
    }
    m
}

/// Centroid `(M10/M00, M01/M00)` in pixels.
pub fn centroid<M: MaskView + ?Sized>(mask: &M) -> Result<(f64, f64)> {
    let [m00, m10, m01] = low_order_moments(mask);
    if m00 <= EMPTY_MASS_EPS {
        return Err(Error::EmptySilhouette { mass: m00 });
    }
    Ok((m10 / m00, m01 / m00))
}
