//! Raycast renderer for synthetic posed image sequences with exact depth.
//!
//! Scenes are made of textured plane patches and axis-aligned boxes. The
//! texture is a seeded solid noise evaluated at the world-space hit point,
//! so every view of a surface point sees the same color.

use std::sync::Arc;

use nalgebra::Vector3;
use thiserror::Error;

use crate::eval::{backproject_depth, voxel_downsample, EvalError, PointCloud};
use crate::geometry::{CameraIntrinsics, GeometryError, RigidPose, Trajectory, TrajectoryEntry};
use crate::image::RgbImage;
use crate::maps::DepthMap;
use crate::sampler::{ImageBundle, Keyframe, BUNDLE_SIZE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("camera {frame} at {position:?} is inside the scene geometry")]
    CameraInside { frame: usize, position: [f64; 3] },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Square patch of the plane through `center` with unit `normal`.
    Plane {
        center: Vector3<f64>,
        normal: Vector3<f64>,
        half_extent: f64,
    },
    Box { min: Vector3<f64>, max: Vector3<f64> },
}

impl Primitive {
    /// Ray parameter of the first hit with `t > 0`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane {
                center,
                normal,
                half_extent,
            } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / denom;
                if !(t > 1e-9) {
                    return None;
                }
                let offset = origin + dir * t - center;
                let (u, v) = plane_basis(normal);
                (offset.dot(&u).abs() <= *half_extent && offset.dot(&v).abs() <= *half_extent).then_some(t)
            }
            Primitive::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[a];
                    let (mut ta, mut tb) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                if t0 > t1 || t1 <= 1e-9 {
                    return None;
                }
                Some(if t0 > 1e-9 { t0 } else { t1 })
            }
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Plane { .. } => false,
            Primitive::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
        }
    }
}

fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

/// Circular flight around `center` looking at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbit {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub height: f64,
    pub step_deg: f64,
    pub frames: usize,
}

impl Orbit {
    pub fn poses(&self) -> Vec<RigidPose> {
        (0..self.frames)
            .map(|i| {
                let a = (i as f64 * self.step_deg).to_radians();
                let eye = self.center + Vector3::new(self.radius * a.cos(), self.radius * a.sin(), self.height);
                look_at(&eye, &self.center)
            })
            .collect()
    }
}

/// Camera-to-world pose at `eye` looking at `target`, world z up, image y down.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> RigidPose {
    let f = (target - eye).normalize();
    let up = if f.cross(&Vector3::z()).norm() < 1e-9 { Vector3::y() } else { Vector3::z() };
    let r = f.cross(&up).normalize();
    let d = f.cross(&r);
    let m = nalgebra::Matrix3::from_columns(&[r, d, f]);
    RigidPose::from_matrix(&m, *eye)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CameraPath {
    Orbit(Orbit),
    Poses(Vec<RigidPose>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub path: CameraPath,
    pub intrinsics: CameraIntrinsics,
    pub fps: f64,
    pub seed: u64,
    /// Voxel size of the ground-truth cloud.
    pub gt_voxel: f64,
}

/// Default desk-scale image size.
pub const DEFAULT_WIDTH: usize = 256;
pub const DEFAULT_HEIGHT: usize = 192;

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(300.0, 300.0, 127.5, 95.5, DEFAULT_WIDTH, DEFAULT_HEIGHT).expect("valid default intrinsics")
}

impl SyntheticScene {
    /// A block of buildings on a ground patch, orbited at radius 10.
    pub fn orbit_scene(frames: usize, step_deg: f64, seed: u64) -> SyntheticScene {
        let b = |min: [f64; 3], max: [f64; 3]| Primitive::Box {
            min: Vector3::from(min),
            max: Vector3::from(max),
        };
        SyntheticScene {
            primitives: vec![
                Primitive::Plane {
                    center: Vector3::zeros(),
                    normal: Vector3::z(),
                    half_extent: 9.0,
                },
                b([-1.5, -1.5, 0.0], [1.5, 1.5, 3.5]),
                b([2.5, -1.0, 0.0], [4.0, 1.0, 1.8]),
                b([-4.5, 1.5, 0.0], [-2.5, 3.5, 1.2]),
                b([-1.0, -5.0, 0.0], [1.0, -3.5, 2.4]),
            ],
            path: CameraPath::Orbit(Orbit {
                center: Vector3::new(0.0, 0.0, 1.0),
                radius: 10.0,
                height: 6.0,
                step_deg,
                frames,
            }),
            intrinsics: default_intrinsics(),
            fps: 30.0,
            seed,
            gt_voxel: 0.05,
        }
    }

    /// A textured plane facing the cameras at `depth`, viewed from five
    /// positions spaced `baseline` apart along x.
    pub fn fronto_parallel_plane(depth: f64, baseline: f64, seed: u64) -> SyntheticScene {
        Self::slanted_plane(depth, 0.0, baseline, seed)
    }

    /// Like [`Self::fronto_parallel_plane`] with the plane rotated by
    /// `angle_deg` about the vertical image axis.
    pub fn slanted_plane(depth: f64, angle_deg: f64, baseline: f64, seed: u64) -> SyntheticScene {
        // cameras look along +x from x = -depth; z is up
        let a = angle_deg.to_radians();
        let normal = Vector3::new(-a.cos(), a.sin(), 0.0);
        let poses = (0..5)
            .map(|i| {
                let eye = Vector3::new(-depth, (i as f64 - 2.0) * baseline, 0.0);
                look_at(&eye, &(eye + Vector3::x()))
            })
            .collect();
        SyntheticScene {
            primitives: vec![Primitive::Plane {
                center: Vector3::zeros(),
                normal,
                half_extent: 1000.0,
            }],
            path: CameraPath::Poses(poses),
            intrinsics: default_intrinsics(),
            fps: 30.0,
            seed,
            gt_voxel: 0.05,
        }
    }

    /// A scene without texture, for masking tests.
    pub fn untextured(mut self) -> SyntheticScene {
        self.seed = u64::MAX;
        self
    }

    pub fn poses(&self) -> Vec<RigidPose> {
        match &self.path {
            CameraPath::Orbit(o) => o.poses(),
            CameraPath::Poses(p) => p.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.intrinsics.validate()?;
        if !(self.fps > 0.0) || !(self.gt_voxel > 0.0) {
            return Err(SceneError::Invalid("fps and gt_voxel must be positive".into()));
        }
        if let CameraPath::Orbit(o) = &self.path {
            if !(o.radius > 0.0) || o.frames == 0 {
                return Err(SceneError::Invalid("orbit needs a positive radius and frames".into()));
            }
        }
        for p in &self.primitives {
            match p {
                Primitive::Plane { normal, half_extent, .. } => {
                    if (normal.norm() - 1.0).abs() > 1e-9 || !(*half_extent > 0.0) {
                        return Err(SceneError::Invalid("plane needs a unit normal and positive extent".into()));
                    }
                }
                Primitive::Box { min, max } => {
                    if (0..3).any(|a| !(min[a] < max[a])) {
                        return Err(SceneError::Invalid("box min must be below max".into()));
                    }
                }
            }
        }
        for (i, pose) in self.poses().iter().enumerate() {
            let c = pose.translation();
            if self.primitives.iter().any(|p| p.contains(c)) {
                return Err(SceneError::CameraInside {
                    frame: i,
                    position: [c.x, c.y, c.z],
                });
            }
        }
        Ok(())
    }

    /// First hit along the ray: `(t, primitive index)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    fn shade(&self, p: &Vector3<f64>, primitive: usize) -> [u8; 3] {
        const TINTS: [[f64; 3]; 5] = [
            [1.0, 0.95, 0.85],
            [0.9, 0.9, 1.0],
            [1.0, 0.85, 0.8],
            [0.85, 1.0, 0.85],
            [0.95, 0.9, 0.95],
        ];
        let v = if self.seed == u64::MAX { 0.5 } else { texture(p, self.seed) };
        let tint = TINTS[primitive % TINTS.len()];
        tint.map(|c| (25.0 + 210.0 * v * c).round().clamp(0.0, 255.0) as u8)
    }

    /// Color (2×2 supersampled) and exact depth at pixel centers.
    pub fn render(&self, pose: &RigidPose) -> (RgbImage, DepthMap) {
        let k = &self.intrinsics;
        let origin = *pose.translation();
        let mut image = RgbImage::new(k.width, k.height);
        let mut depth = DepthMap::invalid(k.width, k.height);
        for y in 0..k.height {
            for x in 0..k.width {
                let ray = k.ray(x as f64, y as f64);
                if let Some((t, _)) = self.cast(&origin, &pose.transform_vector(&ray)) {
                    depth.data[y * k.width + x] = (t * ray.z) as f32;
                }
                let mut acc = [0.0f64; 3];
                for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let dir = pose.transform_vector(&k.ray(x as f64 + sx, y as f64 + sy));
                    let c = match self.cast(&origin, &dir) {
                        Some((t, i)) => self.shade(&(origin + dir * t), i),
                        None => [0, 0, 0],
                    };
                    for ch in 0..3 {
                        acc[ch] += c[ch] as f64;
                    }
                }
                image.data[y * k.width + x] = acc.map(|c| (c / 4.0).round() as u8);
            }
        }
        (image, depth)
    }

    pub fn render_all(&self) -> Result<SyntheticData, SceneError> {
        self.validate()?;
        let frames = self
            .poses()
            .into_iter()
            .enumerate()
            .map(|(i, pose)| {
                let (image, depth) = self.render(&pose);
                SyntheticFrame {
                    timestamp: i as f64 / self.fps,
                    pose,
                    image,
                    depth,
                }
            })
            .collect();
        Ok(SyntheticData {
            intrinsics: self.intrinsics,
            frames,
            gt_voxel: self.gt_voxel,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub timestamp: f64,
    pub pose: RigidPose,
    pub image: RgbImage,
    pub depth: DepthMap,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<SyntheticFrame>,
    pub gt_voxel: f64,
}

impl SyntheticData {
    pub fn trajectory(&self) -> Result<Trajectory, GeometryError> {
        Trajectory::new(
            self.frames
                .iter()
                .map(|f| TrajectoryEntry {
                    timestamp: f.timestamp,
                    pose: f.pose,
                })
                .collect(),
        )
    }

    pub fn keyframes(&self) -> Vec<Keyframe> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| Keyframe {
                id: i as u64,
                timestamp: f.timestamp,
                image: Arc::new(f.image.clone()),
                pose: f.pose,
            })
            .collect()
    }

    /// The five frames starting at `start` as a bundle, without checking
    /// the sampling criteria.
    pub fn bundle(&self, start: usize) -> Option<ImageBundle> {
        let frames = self.keyframes().get(start..start + BUNDLE_SIZE)?.to_vec();
        Some(ImageBundle {
            frames,
            intrinsics: self.intrinsics,
        })
    }

    /// All depth maps back-projected and voxel-downsampled.
    pub fn gt_cloud(&self) -> Result<PointCloud, SceneError> {
        let mut all = PointCloud::default();
        for f in &self.frames {
            all.extend(&backproject_depth(&f.depth, Some(&f.image), &self.intrinsics, &f.pose));
        }
        Ok(voxel_downsample(&all, self.gt_voxel)?)
    }
}

fn hash(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, salt: u64) -> f64 {
    let h = hash(hash(hash(hash(salt) ^ ix as u64) ^ iy as u64) ^ iz as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: &Vector3<f64>, salt: u64) -> f64 {
    let f = p.map(f64::floor);
    let w = (p - f).map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (f.x as i64, f.y as i64, f.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wx = if dx == 1 { w.x } else { 1.0 - w.x };
                let wy = if dy == 1 { w.y } else { 1.0 - w.y };
                let wz = if dz == 1 { w.z } else { 1.0 - w.z };
                acc += wx * wy * wz * lattice(ix + dx, iy + dy, iz + dz, salt);
            }
        }
    }
    acc
}

/// Solid texture in [0, 1]: four noise octaves modulated by a coarse checkerboard.
pub fn texture(p: &Vector3<f64>, seed: u64) -> f64 {
    const OCTAVES: [(f64, f64); 4] = [(1.0, 0.3), (2.9, 0.25), (7.3, 0.3), (17.0, 0.4)];
    let mut v = 0.0;
    for (i, (freq, amp)) in OCTAVES.iter().enumerate() {
        v += amp * value_noise(&(p * *freq), seed.wrapping_mul(31).wrapping_add(i as u64));
    }
    // stretch the contrast around the mean of the octave sum
    let v = 0.5 + 2.0 * (v - 0.625);
    let c = p.map(|x| (x * 0.5).floor() as i64);
    let check = if (c.x + c.y + c.z).rem_euclid(2) == 0 { 1.0 } else { 0.8 };
    (v * check).clamp(0.0, 1.0)
}
