//! Run configuration as TOML with one table per stage:
//!
//! ```toml
//! [sampler]
//! max_rotation_deg = 5.0
//!
//! [depth]
//! d_min = 4.0
//! d_max = 40.0
//! p1 = 24
//!
//! [fusion]
//! iterations = [10, 5, 4]
//! ```
//!
//! Every key is optional and falls back to its default. Unknown keys and
//! tables are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionConfig;
use crate::io::IoError;
use crate::matcher::{check_window, DepthRange};
use crate::sampler::SamplingCriteria;
use crate::sgm::{DepthParams, DogParams, SgmParams};

/// Environment variable overriding `pipeline.threads`.
pub const THREADS_ENV: &str = "SKYFUSE_THREADS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub max_rotation_deg: f64,
    pub min_translation: f64,
    pub max_translation: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let c = SamplingCriteria::default();
        SamplerSection {
            max_rotation_deg: c.max_rotation_deg,
            min_translation: c.min_translation,
            max_translation: c.max_translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub d_min: f64,
    pub d_max: f64,
    pub levels: usize,
    pub census_window: usize,
    pub p1: u32,
    pub p2: u32,
    pub path_count: usize,
    pub half_width: usize,
    pub surface_normals: bool,
    pub prior_smoothing: usize,
    pub normal_smoothing: usize,
    pub dog_sigma: f64,
    pub dog_ratio: f64,
    pub dog_threshold: f64,
}

impl Default for DepthSection {
    fn default() -> Self {
        let p = DepthParams::default();
        DepthSection {
            d_min: 4.0,
            d_max: 40.0,
            levels: p.levels,
            census_window: p.census_window,
            p1: p.sgm.p1,
            p2: p.sgm.p2,
            path_count: p.sgm.path_count,
            half_width: p.half_width,
            surface_normals: p.surface_normals,
            prior_smoothing: p.prior_smoothing,
            normal_smoothing: p.normal_smoothing,
            dog_sigma: p.dog.sigma,
            dog_ratio: p.dog.ratio,
            dog_threshold: p.dog.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub depth_tolerance: f64,
    pub normal_tolerance_deg: f64,
    pub photometric_weight: f64,
    pub initial_weight: f64,
    /// Registration iterations per level, finest first.
    pub iterations: [usize; 3],
    pub convergence: f64,
    pub min_inlier_fraction: f64,
    pub max_point_distance: f64,
    /// Factor applied to every estimated depth map before fusion.
    pub depth_scale: f64,
    /// Surfels below this confidence are left out of the exported cloud.
    pub export_min_confidence: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        let f = FusionConfig::default();
        FusionSection {
            depth_tolerance: f.depth_tolerance,
            normal_tolerance_deg: f.normal_tolerance_deg,
            photometric_weight: f.photometric_weight,
            initial_weight: f.initial_weight,
            iterations: f.iterations,
            convergence: f.convergence,
            min_inlier_fraction: f.min_inlier_fraction,
            max_point_distance: f.max_point_distance,
            depth_scale: 1.0,
            export_min_confidence: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Ground-truth depths beyond this are ignored.
    pub depth_cap: f64,
    /// Voxel size for clouds before comparison. Zero disables downsampling.
    pub voxel: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            depth_cap: 300.0,
            voxel: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// 0 runs every stage on the calling thread; anything else runs the
    /// sampling, depth and fusion stages on their own threads.
    pub threads: usize,
    /// Capacity of each queue between stages.
    pub queue_capacity: usize,
    /// Feed frames at their timestamps and drop those that arrive while
    /// the depth stage is busy. Off, the producer blocks instead.
    pub realtime: bool,
    /// Extra latency added to every depth estimate, in milliseconds.
    pub depth_delay_ms: u64,
    /// A run fails when more than this fraction of registrations fail.
    pub max_failure_fraction: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            threads: 0,
            queue_capacity: 2,
            realtime: false,
            depth_delay_ms: 0,
            max_failure_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sampler: SamplerSection,
    pub depth: DepthSection,
    pub fusion: FusionSection,
    pub eval: EvalSection,
    pub pipeline: PipelineSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = crate::io::read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| ConfigError::Invalid(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sampling_criteria().validate().map_err(|e| invalid(&e))?;
        self.depth_range()?;
        let d = self.depth_params();
        d.sgm.validate().map_err(|e| invalid(&e))?;
        check_window(d.census_window).map_err(|e| invalid(&e))?;
        if d.levels == 0 {
            return Err(ConfigError::Invalid("depth.levels must be at least 1".into()));
        }
        if !(d.dog.sigma > 0.0 && d.dog.ratio > 1.0 && d.dog.threshold >= 0.0) {
            return Err(ConfigError::Invalid(
                "depth.dog_sigma must be positive, dog_ratio above 1 and dog_threshold non-negative".into(),
            ));
        }
        self.fusion_config().validate().map_err(|e| invalid(&e))?;
        let f = &self.fusion;
        if !(f.depth_scale > 0.0 && f.depth_scale.is_finite()) {
            return Err(ConfigError::Invalid("fusion.depth_scale must be positive".into()));
        }
        if !(f.export_min_confidence >= 0.0) {
            return Err(ConfigError::Invalid("fusion.export_min_confidence must be non-negative".into()));
        }
        if !(self.eval.depth_cap > 0.0) || !(self.eval.voxel >= 0.0) {
            return Err(ConfigError::Invalid("eval.depth_cap must be positive and eval.voxel non-negative".into()));
        }
        let p = &self.pipeline;
        if p.queue_capacity == 0 {
            return Err(ConfigError::Invalid("pipeline.queue_capacity must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&p.max_failure_fraction) {
            return Err(ConfigError::Invalid("pipeline.max_failure_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `pipeline.threads`, unless the environment overrides it.
    pub fn effective_threads(&self) -> Result<usize, ConfigError> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{THREADS_ENV}={v:?} is not a thread count"))),
            Err(_) => Ok(self.pipeline.threads),
        }
    }

    pub fn sampling_criteria(&self) -> SamplingCriteria {
        SamplingCriteria {
            max_rotation_deg: self.sampler.max_rotation_deg,
            min_translation: self.sampler.min_translation,
            max_translation: self.sampler.max_translation,
        }
    }

    pub fn depth_range(&self) -> Result<DepthRange, ConfigError> {
        DepthRange::new(self.depth.d_min, self.depth.d_max).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn depth_params(&self) -> DepthParams {
        let d = &self.depth;
        DepthParams {
            levels: d.levels,
            census_window: d.census_window,
            sgm: SgmParams {
                p1: d.p1,
                p2: d.p2,
                path_count: d.path_count,
            },
            half_width: d.half_width,
            dog: DogParams {
                sigma: d.dog_sigma,
                ratio: d.dog_ratio,
                threshold: d.dog_threshold,
            },
            surface_normals: d.surface_normals,
            prior_smoothing: d.prior_smoothing,
            normal_smoothing: d.normal_smoothing,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        let f = &self.fusion;
        FusionConfig {
            depth_tolerance: f.depth_tolerance,
            normal_tolerance_deg: f.normal_tolerance_deg,
            photometric_weight: f.photometric_weight,
            initial_weight: f.initial_weight,
            iterations: f.iterations,
            convergence: f.convergence,
            min_inlier_fraction: f.min_inlier_fraction,
            max_point_distance: f.max_point_distance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.depth_params(), DepthParams::default());
        assert_eq!(c.fusion_config(), FusionConfig::default());
        assert_eq!(c.sampling_criteria(), SamplingCriteria::default());
    }

    #[test]
    fn partial_sections_override_single_keys() {
        let c = PipelineConfig::from_toml("[depth]\np1 = 8\np2 = 32\n\n[pipeline]\nthreads = 3\n").unwrap();
        assert_eq!((c.depth.p1, c.depth.p2, c.pipeline.threads), (8, 32, 3));
        assert_eq!(c.depth.levels, 3);
        let dotted = PipelineConfig::from_toml("depth.p1 = 8\ndepth.p2 = 32\npipeline.threads = 3\n").unwrap();
        assert_eq!(dotted, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("[depth]\npee1 = 8\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(PipelineConfig::from_toml("[slam]\nx = 1\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn component_invariants_are_checked() {
        for bad in [
            "depth.d_min = 50.0",
            "depth.census_window = 4",
            "depth.p1 = 50\ndepth.p2 = 10",
            "fusion.depth_scale = 0.0",
            "fusion.iterations = [0, 5, 4]",
            "sampler.min_translation = -1.0",
            "pipeline.queue_capacity = 0",
        ] {
            assert!(matches!(PipelineConfig::from_toml(bad), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn serialized_config_reads_back() {
        let mut c = PipelineConfig::default();
        c.depth.surface_normals = false;
        c.fusion.iterations = [3, 2, 1];
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
