//! Surfel model: depth scaling, frame-to-model registration, integration
//! and model-view rendering.

mod integrate;
mod register;
mod render;

use nalgebra::Vector3;
use thiserror::Error;

use crate::eval::PointCloud;
use crate::geometry::CameraIntrinsics;
use crate::image::RgbImage;
use crate::maps::{DepthMap, NormalMap};
use crate::sgm::normals_from_depth;

pub use integrate::{integrate_frame, IntegrationStats};
pub use register::{register_frame, Registration};
pub use render::{render_model_view, ModelView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid fusion configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("registration failed: {0}")]
    Registration(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Association depth gate, relative to the pixel depth.
    pub depth_tolerance: f64,
    /// Association normal gate in degrees.
    pub normal_tolerance_deg: f64,
    /// Weight of the photometric term against the point-to-plane term.
    pub photometric_weight: f64,
    /// Confidence of a new surfel and increment per association.
    pub initial_weight: f64,
    /// Gauss-Newton iterations per pyramid level, finest first.
    pub iterations: [usize; 3],
    /// Stop a level once the increment norm drops below this.
    pub convergence: f64,
    /// Registration fails below this fraction of associated points.
    pub min_inlier_fraction: f64,
    /// Registration correspondence gate, relative to the point depth.
    pub max_point_distance: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            depth_tolerance: 0.05,
            normal_tolerance_deg: 20.0,
            photometric_weight: 0.1,
            initial_weight: 1.0,
            iterations: [10, 5, 4],
            convergence: 1e-6,
            min_inlier_fraction: 0.2,
            max_point_distance: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |msg: &str| Err(FusionError::Config(msg.into()));
        if !(self.depth_tolerance > 0.0 && self.depth_tolerance < 1.0) {
            return bad("depth_tolerance must lie in (0, 1)");
        }
        if !(self.normal_tolerance_deg > 0.0 && self.normal_tolerance_deg <= 180.0) {
            return bad("normal_tolerance_deg must lie in (0, 180]");
        }
        if !(self.photometric_weight >= 0.0 && self.photometric_weight.is_finite()) {
            return bad("photometric_weight must be non-negative");
        }
        if !(self.initial_weight > 0.0 && self.initial_weight.is_finite()) {
            return bad("initial_weight must be positive");
        }
        if self.iterations[0] == 0 {
            return bad("the finest registration level needs at least one iteration");
        }
        if !(self.convergence > 0.0) {
            return bad("convergence must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return bad("min_inlier_fraction must lie in [0, 1]");
        }
        if !(self.max_point_distance > 0.0) {
            return bad("max_point_distance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surfel {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
    /// RGB in `[0, 255]`, kept in floating point for averaging.
    pub color: [f64; 3],
    pub confidence: f64,
    pub last_seen: u64,
}

impl Surfel {
    pub fn color_u8(&self) -> [u8; 3] {
        self.color.map(|c| c.round().clamp(0.0, 255.0) as u8)
    }
}

#[derive(Debug, Clone)]
pub struct SurfelMap {
    surfels: Vec<Surfel>,
    frame_counter: u64,
    config: FusionConfig,
}

impl SurfelMap {
    pub fn new(config: FusionConfig) -> Result<Self, FusionError> {
        config.validate()?;
        Ok(SurfelMap {
            surfels: Vec::new(),
            frame_counter: 0,
            config,
        })
    }

    pub fn surfels(&self) -> &[Surfel] {
        &self.surfels
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    /// Adds a surfel directly, bypassing integration.
    pub fn push(&mut self, surfel: Surfel) -> Result<(), FusionError> {
        if ((surfel.normal.norm() - 1.0).abs() > 1e-6)
            || !(surfel.radius > 0.0)
            || !(surfel.confidence >= self.config.initial_weight)
            || !surfel.position.iter().all(|v| v.is_finite())
        {
            return Err(FusionError::Config(
                "surfel needs a unit normal, positive radius and confidence of at least the initial weight".into(),
            ));
        }
        self.surfels.push(surfel);
        Ok(())
    }
}

/// A color image with depth and camera-frame normals on the same grid.
#[derive(Debug, Clone)]
pub struct RgbdFrame {
    color: RgbImage,
    depth: DepthMap,
    normals: NormalMap,
    intrinsics: CameraIntrinsics,
    timestamp: f64,
}

impl RgbdFrame {
    pub fn new(
        color: RgbImage,
        depth: DepthMap,
        normals: NormalMap,
        intrinsics: CameraIntrinsics,
        timestamp: f64,
    ) -> Result<Self, FusionError> {
        let dims = (intrinsics.width, intrinsics.height);
        if (color.width, color.height) != dims
            || (depth.width, depth.height) != dims
            || (normals.width, normals.height) != dims
        {
            return Err(FusionError::Shape(format!(
                "color {}x{}, depth {}x{} and normals {}x{} must match the intrinsics {}x{}",
                color.width, color.height, depth.width, depth.height, normals.width, normals.height, dims.0, dims.1
            )));
        }
        Ok(RgbdFrame {
            color,
            depth,
            normals,
            intrinsics,
            timestamp,
        })
    }

    /// Frame whose normals are taken from the depth map.
    pub fn from_depth(
        color: RgbImage,
        depth: DepthMap,
        intrinsics: CameraIntrinsics,
        timestamp: f64,
    ) -> Result<Self, FusionError> {
        let normals = normals_from_depth(&depth, &intrinsics);
        RgbdFrame::new(color, depth, normals, intrinsics, timestamp)
    }

    pub fn color(&self) -> &RgbImage {
        &self.color
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn normals(&self) -> &NormalMap {
        &self.normals
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

pub fn scale_depth(depth: &DepthMap, s: f64) -> Result<DepthMap, FusionError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(FusionError::Config(format!("depth scale must be positive, got {s}")));
    }
    let mut out = depth.clone();
    for d in &mut out.data {
        if *d > 0.0 {
            *d = (*d as f64 * s) as f32;
        }
    }
    Ok(out)
}

/// Surfels with `confidence ≥ min_confidence` as a colored, oriented cloud.
pub fn export_cloud(map: &SurfelMap, min_confidence: f64) -> PointCloud {
    let kept: Vec<&Surfel> = map.surfels.iter().filter(|s| s.confidence >= min_confidence).collect();
    PointCloud {
        points: kept.iter().map(|s| s.position).collect(),
        colors: Some(kept.iter().map(|s| s.color_u8()).collect()),
        normals: Some(kept.iter().map(|s| s.normal).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfel(z: f64, confidence: f64) -> Surfel {
        Surfel {
            position: Vector3::new(0.0, 0.0, z),
            normal: -Vector3::z(),
            radius: 0.1,
            color: [10.0, 20.0, 30.0],
            confidence,
            last_seen: 0,
        }
    }

    #[test]
    fn scale_depth_cases() {
        let d = DepthMap::from_fn(2, 1, |x, _| if x == 0 { 10.0 } else { 0.0 });
        assert_eq!(scale_depth(&d, 1.0).unwrap(), d);
        let s = scale_depth(&d, 2.0).unwrap();
        assert_eq!(s.data, vec![20.0, 0.0]);
        assert!(scale_depth(&d, 0.0).is_err());
        assert!(scale_depth(&d, -1.0).is_err());
    }

    #[test]
    fn export_thresholds() {
        let mut map = SurfelMap::new(FusionConfig::default()).unwrap();
        for (i, c) in [1.0, 1.0, 3.0, 3.0, 3.0].into_iter().enumerate() {
            map.push(surfel(i as f64 + 1.0, c)).unwrap();
        }
        assert_eq!(export_cloud(&map, 0.0).len(), 5);
        assert_eq!(export_cloud(&map, 10.0).len(), 0);
        let upper = export_cloud(&map, 2.0);
        assert_eq!(upper.len(), 3);
        assert_eq!(upper.points[0].z, 3.0);
        assert_eq!(upper.colors.unwrap()[0], [10, 20, 30]);
    }

    #[test]
    fn push_rejects_broken_surfels() {
        let mut map = SurfelMap::new(FusionConfig::default()).unwrap();
        let mut s = surfel(1.0, 1.0);
        s.normal *= 2.0;
        assert!(map.push(s).is_err());
        assert!(map.push(surfel(1.0, 0.5)).is_err());
    }

    #[test]
    fn config_validation() {
        let c = FusionConfig {
            depth_tolerance: 0.0,
            ..Default::default()
        };
        assert!(SurfelMap::new(c).is_err());
        let c = FusionConfig {
            min_inlier_fraction: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
