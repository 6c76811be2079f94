//! Coarse-to-fine depth estimation for one bundle.

use crate::geometry::{relative_pose, CameraIntrinsics};
use crate::image::GrayImage;
use crate::maps::{ConfidenceMap, DepthMap, NormalMap};
use crate::matcher::{
    generate_plane_set, local_sweep, sweep_cost_volume, CostVolume, DepthRange, MatchingView, PlaneSet,
    SweepInput, DEFAULT_CENSUS_WINDOW,
};
use crate::sampler::ImageBundle;

use super::aggregate::{sgm_aggregate, sgm_sn_aggregate, SgmParams};
use super::filters::{
    confidence_from_volume, dog_mask, median_filter, normals_from_depth, smooth_depth, wta_extract, DogParams,
};
use super::SgmError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthParams {
    pub levels: usize,
    pub census_window: usize,
    pub sgm: SgmParams,
    /// Planes evaluated on each side of the prior at finer levels.
    pub half_width: usize,
    pub dog: DogParams,
    /// Use the surface-normal-aware transition at finer levels.
    pub surface_normals: bool,
    /// Radius of the smoothing applied to a level's depth before taking the
    /// normals passed down as priors. Zero disables it.
    pub prior_smoothing: usize,
    /// Smoothing radius for the normals returned with the final depth map.
    pub normal_smoothing: usize,
}

impl Default for DepthParams {
    fn default() -> Self {
        DepthParams {
            levels: 3,
            census_window: DEFAULT_CENSUS_WINDOW,
            sgm: SgmParams::default(),
            half_width: 4,
            dog: DogParams::default(),
            surface_normals: true,
            prior_smoothing: 2,
            normal_smoothing: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthEstimate {
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub confidence: ConfidenceMap,
    pub intrinsics: CameraIntrinsics,
}

/// Finest-level intermediates, for inspecting the regularization step.
#[derive(Debug, Clone)]
pub struct FinestLevel {
    pub raw: CostVolume,
    pub prior_depth: Option<DepthMap>,
    pub prior_normals: Option<NormalMap>,
    pub intrinsics: CameraIntrinsics,
}

pub fn hierarchical_estimate(
    bundle: &ImageBundle,
    range: &DepthRange,
    params: &DepthParams,
) -> Result<DepthEstimate, SgmError> {
    hierarchical_estimate_traced(bundle, range, params).map(|(e, _)| e)
}

pub fn hierarchical_estimate_traced(
    bundle: &ImageBundle,
    range: &DepthRange,
    params: &DepthParams,
) -> Result<(DepthEstimate, FinestLevel), SgmError> {
    params.sgm.validate()?;
    if params.levels == 0 {
        return Err(SgmError::Params("need at least one pyramid level".into()));
    }
    let reference = bundle.reference();
    let matching: Vec<_> = bundle.matching().collect();
    let matching_poses: Vec<_> = matching.iter().map(|f| f.pose).collect();
    let relatives: Vec<_> = matching
        .iter()
        .map(|f| relative_pose(&reference.pose, &f.pose))
        .collect();

    let ref_pyr = reference.image.to_gray().pyramid(params.levels);
    let view_pyrs: Vec<Vec<GrayImage>> = matching
        .iter()
        .map(|f| f.image.to_gray().pyramid(params.levels))
        .collect();
    let mut intrinsics = vec![bundle.intrinsics];
    for l in 1..params.levels {
        let k = intrinsics[l - 1].half_resolution();
        if k.width < 8 || k.height < 8 || k.width < params.census_window || k.height < params.census_window {
            return Err(SgmError::Params(format!(
                "image too small for {} pyramid levels",
                params.levels
            )));
        }
        intrinsics.push(k);
    }

    let input_at = |l: usize| SweepInput {
        intrinsics: intrinsics[l],
        reference: ref_pyr[l].clone(),
        views: view_pyrs
            .iter()
            .zip(&relatives)
            .map(|(pyr, rel)| MatchingView {
                image: pyr[l].clone(),
                relative: *rel,
            })
            .collect(),
    };
    let planes_at = |l: usize| -> Result<PlaneSet, SgmError> {
        Ok(generate_plane_set(&intrinsics[l], &reference.pose, &matching_poses, range)?)
    };

    let coarsest = params.levels - 1;
    let input = input_at(coarsest);
    let planes = planes_at(coarsest)?;
    let mut raw = sweep_cost_volume(&input, &planes, params.census_window)?;
    let mut aggregated = sgm_aggregate(&raw, &params.sgm)?;
    let mut depth = median_filter(&wta_extract(&aggregated));
    let prior_normals = |depth: &DepthMap, k: &CameraIntrinsics| {
        if params.prior_smoothing > 0 {
            normals_from_depth(&smooth_depth(depth, params.prior_smoothing), k)
        } else {
            normals_from_depth(depth, k)
        }
    };
    let mut normals = prior_normals(&depth, &intrinsics[coarsest]);
    let mut priors = (None, None);

    for l in (0..coarsest).rev() {
        let k = intrinsics[l];
        let input = input_at(l);
        let planes = planes_at(l)?;
        let prior_d = depth.upsample_nearest(k.width, k.height);
        let prior_n = normals.upsample_nearest(k.width, k.height);
        raw = local_sweep(&input, &prior_d, params.half_width, &planes, params.census_window)?;
        aggregated = if params.surface_normals {
            sgm_sn_aggregate(&raw, &params.sgm, &prior_n, &prior_d, &k)?
        } else {
            sgm_aggregate(&raw, &params.sgm)?
        };
        depth = median_filter(&wta_extract(&aggregated));
        normals = prior_normals(&depth, &k);
        priors = (Some(prior_d), Some(prior_n));
    }

    let k0 = intrinsics[0];
    let mask = dog_mask(&ref_pyr[0], params.dog.sigma, params.dog.ratio, params.dog.threshold)?;
    mask.apply(&mut depth);
    let normals = if params.normal_smoothing > 0 {
        normals_from_depth(&smooth_depth(&depth, params.normal_smoothing), &k0)
    } else {
        normals_from_depth(&depth, &k0)
    };
    let mut confidence = confidence_from_volume(&aggregated);
    for (c, d) in confidence.data.iter_mut().zip(&depth.data) {
        if *d <= 0.0 {
            *c = None;
        }
    }
    Ok((
        DepthEstimate {
            depth,
            normals,
            confidence,
            intrinsics: k0,
        },
        FinestLevel {
            raw,
            prior_depth: priors.0,
            prior_normals: priors.1,
            intrinsics: k0,
        },
    ))
}
