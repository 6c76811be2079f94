//! Cost-volume regularization and depth extraction.

mod aggregate;
mod filters;
mod hierarchy;

use thiserror::Error;

use crate::matcher::MatchError;

pub use aggregate::{
    aggregate_with, sgm_aggregate, sgm_sn_aggregate, NoShift, SgmParams, TangentPlaneShift, TransitionShift,
    DIRECTIONS, MAX_SHIFT,
};
pub use filters::{
    confidence_from_volume, dog_mask, median_filter, normals_from_depth, NORMAL_DISCONTINUITY, smooth_depth, wta_extract, DogParams, ValidityMask,
};
pub use hierarchy::{hierarchical_estimate, hierarchical_estimate_traced, DepthEstimate, DepthParams, FinestLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SgmError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Match(#[from] MatchError),
}
