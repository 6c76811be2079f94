//! Camera model, rigid and similarity transforms, plane-induced homographies
//! and least-squares similarity alignment.
//!
//! Poses map the camera frame into the world frame. A point `x_c` expressed
//! in camera coordinates is `pose.transform_point(x_c)` in the world.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
    #[error("plane depth must be positive, got {0}")]
    PlaneDepth(f64),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
}

/// Pinhole intrinsics. Pixel `(u, v)` refers to the center of the pixel in
/// column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::Intrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside image");
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point. Returns `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Lifts pixel `(u, v)` to the camera-frame point with z-depth `depth`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Ray through pixel `(u, v)` normalized to z = 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.backproject(u, v, 1.0)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    /// Intrinsics of an image decimated by two (coarse pixel `i` sits on
    /// fine pixel `2i`).
    pub fn half_resolution(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: self.cx * 0.5,
            cy: self.cy * 0.5,
            width: self.width / 2,
            height: self.height / 2,
        }
    }
}

const ORTHO_DRIFT: f64 = 1e-9;

/// Rigid transform from the camera frame to the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        RigidPose {
            rotation,
            translation,
        }
        .reorthonormalized()
    }

    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_matrix(rotation);
        RigidPose::new(UnitQuaternion::from_rotation_matrix(&r), translation)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidPose::new(UnitQuaternion::identity(), t)
    }

    /// Rotation about the unit `axis` by `angle_rad`, Rodrigues form.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64, t: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        RigidPose::new(UnitQuaternion::from_axis_angle(&axis, angle_rad), t)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> RigidPose {
        let r = self.rotation.inverse();
        RigidPose {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
        .reorthonormalized()
    }

    /// Left-multiplies by the exponential of the twist `(v, ω)`.
    pub fn perturbed(&self, v: &Vector3<f64>, omega: &Vector3<f64>) -> RigidPose {
        let delta = RigidPose {
            rotation: UnitQuaternion::from_scaled_axis(*omega),
            translation: *v,
        };
        delta.compose(self)
    }

    fn reorthonormalized(mut self) -> Self {
        let n = self.rotation.as_ref().norm();
        if (n - 1.0).abs() > ORTHO_DRIFT {
            self.rotation = UnitQuaternion::new_normalize(*self.rotation.as_ref());
        }
        self
    }
}

/// Composition `a ∘ b`.
pub fn compose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    a.compose(b)
}

/// Transform taking points from the `reference` camera frame into the
/// `source` camera frame.
pub fn relative_pose(reference: &RigidPose, source: &RigidPose) -> RigidPose {
    source.inverse().compose(reference)
}

/// Geodesic angle between the two orientations, in degrees within [0, 180].
pub fn rotation_angle_deg(a: &RigidPose, b: &RigidPose) -> f64 {
    let q = a.rotation.inverse() * b.rotation;
    let q = q.as_ref();
    let angle = 2.0 * q.vector().norm().atan2(q.w.abs());
    angle.to_degrees().clamp(0.0, 180.0)
}

/// Homography induced by the fronto-parallel plane `z = plane_depth` of the
/// reference camera. `rel` maps reference-frame points into the matching
/// camera frame, so the returned matrix maps homogeneous reference pixels to
/// matching-camera pixels.
pub fn plane_homography(
    k: &CameraIntrinsics,
    rel: &RigidPose,
    plane_depth: f64,
) -> Result<Matrix3<f64>, GeometryError> {
    if !(plane_depth > 0.0) {
        return Err(GeometryError::PlaneDepth(plane_depth));
    }
    Ok(plane_homography_inv_depth(k, rel, 1.0 / plane_depth))
}

pub(crate) fn plane_homography_inv_depth(
    k: &CameraIntrinsics,
    rel: &RigidPose,
    inv_depth: f64,
) -> Matrix3<f64> {
    let n = Vector3::new(0.0, 0.0, 1.0);
    let m = rel.rotation() + rel.translation() * n.transpose() * inv_depth;
    k.matrix() * m * k.inverse_matrix()
}

/// Applies a homography to pixel `(u, v)`. `None` if the point maps to
/// infinity or behind the camera.
pub fn apply_homography(h: &Matrix3<f64>, u: f64, v: f64) -> Option<Vector2<f64>> {
    let p = h * Vector3::new(u, v, 1.0);
    if p.z <= 1e-12 {
        return None;
    }
    Some(Vector2::new(p.x / p.z, p.y / p.z))
}

/// `x ↦ scale · R · x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rigid: RigidPose,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rigid: RigidPose::identity(),
        }
    }

    pub fn new(scale: f64, rigid: RigidPose) -> Result<Self, GeometryError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::Alignment(format!(
                "similarity scale must be positive, got {scale}"
            )));
        }
        Ok(SimilarityTransform { scale, rigid })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rigid.quaternion() * (p * self.scale) + self.rigid.translation()
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        let r = self.rigid.quaternion() * other.rigid.quaternion();
        let t = self.rigid.quaternion() * (other.rigid.translation() * self.scale)
            + self.rigid.translation();
        SimilarityTransform {
            scale: self.scale * other.scale,
            rigid: RigidPose::new(r, t),
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let r_inv = self.rigid.quaternion().inverse();
        let s_inv = 1.0 / self.scale;
        SimilarityTransform {
            scale: s_inv,
            rigid: RigidPose::new(r_inv, -(r_inv * self.rigid.translation()) * s_inv),
        }
    }

    /// Applies the transform to a camera-to-world pose: rotation is
    /// composed, position is mapped.
    pub fn apply_pose(&self, pose: &RigidPose) -> RigidPose {
        RigidPose::new(
            self.rigid.quaternion() * pose.quaternion(),
            self.apply(pose.translation()),
        )
    }
}

/// Least-squares similarity (Umeyama) minimizing `Σ‖dst_i − s·R·src_i − t‖²`.
pub fn umeyama_similarity(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<SimilarityTransform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::Alignment(format!(
            "point count mismatch: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeometryError::Alignment(format!(
            "need at least 3 point pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        let dc = d - mu_d;
        cov += dc * sc.transpose();
        scatter += sc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let eig = scatter.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(GeometryError::Alignment(
            "degenerate (collinear or coincident) source points".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        // nalgebra sorts singular values in descending order
        s_diag[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let trace: f64 = svd
        .singular_values
        .iter()
        .zip(s_diag.iter())
        .map(|(a, b)| a * b)
        .sum();
    let scale = trace / var_s;
    if !(scale > 0.0) {
        return Err(GeometryError::Alignment(
            "non-positive scale estimate".into(),
        ));
    }
    let t = mu_d - r * mu_s * scale;
    Ok(SimilarityTransform {
        scale,
        rigid: RigidPose::from_matrix(&r, t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub pose: RigidPose,
}

/// Timestamped poses, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn new(entries: Vec<TrajectoryEntry>) -> Result<Self, GeometryError> {
        if entries.is_empty() {
            return Err(GeometryError::Trajectory("trajectory is empty".into()));
        }
        for w in entries.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(GeometryError::Trajectory(format!(
                    "timestamps not strictly increasing at t={}",
                    w[1].timestamp
                )));
            }
        }
        Ok(Trajectory { entries })
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|e| *e.pose.translation()).collect()
    }

    /// Median spacing of consecutive timestamps; zero for a single entry.
    pub fn frame_period(&self) -> f64 {
        let mut d: Vec<f64> = self
            .entries
            .windows(2)
            .map(|w| w[1].timestamp - w[0].timestamp)
            .collect();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }
}

pub fn quaternion_from_xyzw(x: f64, y: f64, z: f64, w: f64) -> Quaternion<f64> {
    Quaternion::new(w, x, y, z)
}
