//! Census-based multi-image matching over fronto-parallel sweep planes.

mod census;
mod planes;
mod sweep;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::sampler::ImageBundle;

pub use census::{census_transform, check_window, hamming_cost, CensusDescriptorMap, MAX_CENSUS_WINDOW};
pub use planes::{generate_plane_set, max_corner_displacement, DepthRange, PlaneSet};
pub use sweep::{local_sweep, sweep_cost_volume, CostVolume, MatchingView, SweepInput, SENTINEL};

/// Default census window (24-bit descriptors).
pub const DEFAULT_CENSUS_WINDOW: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("matcher configuration error: {0}")]
    Config(String),
    #[error("degenerate geometry: no parallax between reference and matching views")]
    DegenerateGeometry,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Full sweep of a bundle at its native resolution.
pub fn sweep_bundle(bundle: &ImageBundle, planes: &PlaneSet, census_window: usize) -> Result<CostVolume, MatchError> {
    sweep_cost_volume(&SweepInput::from_bundle(bundle), planes, census_window)
}

/// Plane set for a bundle: reference is the middle frame.
pub fn bundle_plane_set(bundle: &ImageBundle, range: &DepthRange) -> Result<PlaneSet, MatchError> {
    let matching: Vec<_> = bundle.matching().map(|f| f.pose).collect();
    generate_plane_set(&bundle.intrinsics, &bundle.reference().pose, &matching, range)
}
