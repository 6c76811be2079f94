//! Evaluation protocol: trajectory and depth metrics, cloud preparation,
//! alignment and comparison.

mod align;
mod cloud;
mod kdtree;
mod metrics;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use align::{align_clouds, cloud_rmse, AlignParams};
pub use cloud::{backproject_depth, estimate_normals, statistical_outlier_removal, voxel_downsample, PointCloud};
pub use kdtree::{KdTree, Neighbor};
pub use metrics::{associate, ate_metrics, depth_metrics, DepthMetrics, TrajectoryMetrics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("only {0} trajectory poses could be matched, need at least 3")]
    TooFewMatches(usize),
    #[error("no pixel is valid in both depth maps")]
    NoValidPixels,
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
