//! Groups posed keyframes into five-frame bundles for depth estimation.
//!
//! A bundle is formed from five consecutive accepted keyframes whose
//! consecutive pairs satisfy [`SamplingCriteria`]. Frames are never shared
//! between bundles. While the depth stage is busy, incoming keyframes are
//! discarded from bundle formation so the sampler never queues work.

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{relative_pose, rotation_angle_deg, CameraIntrinsics, RigidPose};
use crate::image::RgbImage;

pub const BUNDLE_SIZE: usize = 5;
pub const REFERENCE_INDEX: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("keyframe id {got} is not greater than previous id {previous}")]
    OutOfOrder { previous: u64, got: u64 },
    #[error("keyframe image is {got_w}x{got_h}, intrinsics expect {want_w}x{want_h}")]
    ImageSize {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("invalid sampling criteria: {0}")]
    Criteria(String),
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u64,
    pub timestamp: f64,
    pub image: Arc<RgbImage>,
    pub pose: RigidPose,
}

/// Motion thresholds between consecutive bundle frames. Translation is in
/// the (possibly unitless) scale of the input poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingCriteria {
    pub max_rotation_deg: f64,
    pub min_translation: f64,
    pub max_translation: f64,
}

impl Default for SamplingCriteria {
    fn default() -> Self {
        SamplingCriteria {
            max_rotation_deg: 5.0,
            min_translation: 0.02,
            max_translation: 50.0 * 0.02,
        }
    }
}

impl SamplingCriteria {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.max_rotation_deg > 0.0) {
            return Err(SamplerError::Criteria("max_rotation_deg must be > 0".into()));
        }
        if !(self.min_translation >= 0.0 && self.min_translation <= self.max_translation) {
            return Err(SamplerError::Criteria(
                "need 0 <= min_translation <= max_translation".into(),
            ));
        }
        Ok(())
    }
}

/// Whether the motion between `a` and `b` is usable inside one bundle.
pub fn check_pair(criteria: &SamplingCriteria, a: &RigidPose, b: &RigidPose) -> bool {
    let rot = rotation_angle_deg(a, b);
    let trans = relative_pose(a, b).translation().norm();
    rot <= criteria.max_rotation_deg
        && trans >= criteria.min_translation
        && trans <= criteria.max_translation
}

/// Five posed frames sharing one camera; the middle frame is the reference.
#[derive(Debug, Clone)]
pub struct ImageBundle {
    pub frames: Vec<Keyframe>,
    pub intrinsics: CameraIntrinsics,
}

impl ImageBundle {
    pub fn reference(&self) -> &Keyframe {
        &self.frames[REFERENCE_INDEX]
    }

    pub fn matching(&self) -> impl Iterator<Item = &Keyframe> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != REFERENCE_INDEX)
            .map(|(_, f)| f)
    }
}

/// Result of offering a keyframe under backpressure.
#[derive(Debug, Clone)]
pub enum Admission {
    /// The depth stage was busy; the frame only updated pose continuity.
    Discarded,
    Accepted(Option<ImageBundle>),
}

impl Admission {
    pub fn accepted(&self) -> bool {
        matches!(self, Admission::Accepted(_))
    }

    pub fn into_bundle(self) -> Option<ImageBundle> {
        match self {
            Admission::Accepted(b) => b,
            Admission::Discarded => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub frames_seen: u64,
    pub frames_discarded: u64,
    pub bundles_emitted: u64,
}

impl SamplerStats {
    /// Fraction of ingested frames that became a bundle reference.
    pub fn subsampling_ratio(&self) -> f64 {
        if self.frames_seen == 0 {
            0.0
        } else {
            self.bundles_emitted as f64 / self.frames_seen as f64
        }
    }
}

#[derive(Debug)]
pub struct BundleSampler {
    criteria: SamplingCriteria,
    intrinsics: CameraIntrinsics,
    window: Vec<Keyframe>,
    last_id: Option<u64>,
    last_pose: Option<RigidPose>,
    stats: SamplerStats,
}

impl BundleSampler {
    pub fn new(criteria: SamplingCriteria, intrinsics: CameraIntrinsics) -> Result<Self, SamplerError> {
        criteria.validate()?;
        Ok(BundleSampler {
            criteria,
            intrinsics,
            window: Vec::with_capacity(BUNDLE_SIZE),
            last_id: None,
            last_pose: None,
            stats: SamplerStats::default(),
        })
    }

    pub fn stats(&self) -> SamplerStats {
        self.stats
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Most recent pose seen, including discarded frames.
    pub fn last_pose(&self) -> Option<&RigidPose> {
        self.last_pose.as_ref()
    }

    fn admit(&mut self, kf: &Keyframe) -> Result<(), SamplerError> {
        if let Some(prev) = self.last_id {
            if kf.id <= prev {
                return Err(SamplerError::OutOfOrder {
                    previous: prev,
                    got: kf.id,
                });
            }
        }
        if kf.image.width != self.intrinsics.width || kf.image.height != self.intrinsics.height {
            return Err(SamplerError::ImageSize {
                got_w: kf.image.width,
                got_h: kf.image.height,
                want_w: self.intrinsics.width,
                want_h: self.intrinsics.height,
            });
        }
        self.last_id = Some(kf.id);
        self.last_pose = Some(kf.pose);
        self.stats.frames_seen += 1;
        Ok(())
    }

    /// Appends a keyframe; returns a bundle once five consecutive frames
    /// satisfy the criteria pairwise.
    pub fn push_keyframe(&mut self, kf: Keyframe) -> Result<Option<ImageBundle>, SamplerError> {
        self.admit(&kf)?;
        Ok(self.extend_window(kf))
    }

    fn extend_window(&mut self, kf: Keyframe) -> Option<ImageBundle> {
        if let Some(last) = self.window.last() {
            if !check_pair(&self.criteria, &last.pose, &kf.pose) {
                self.window.clear();
            }
        }
        self.window.push(kf);
        if self.window.len() < BUNDLE_SIZE {
            return None;
        }
        self.stats.bundles_emitted += 1;
        let frames = std::mem::replace(&mut self.window, Vec::with_capacity(BUNDLE_SIZE));
        Some(ImageBundle {
            frames,
            intrinsics: self.intrinsics,
        })
    }

    /// Offers a keyframe while the depth stage may be busy. Busy frames are
    /// recorded for pose continuity but never enter a bundle.
    pub fn apply_backpressure(&mut self, depth_busy: bool, kf: Keyframe) -> Result<Admission, SamplerError> {
        self.admit(&kf)?;
        if depth_busy {
            self.stats.frames_discarded += 1;
            return Ok(Admission::Discarded);
        }
        Ok(Admission::Accepted(self.extend_window(kf)))
    }
}

/// Outcome of [`simulate_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSimulation {
    pub stats: SamplerStats,
    /// Ids of the reference frames of every emitted bundle.
    pub references: Vec<u64>,
    /// Ids of every frame that ended up in some bundle.
    pub bundled: Vec<u64>,
    pub max_window: usize,
}

/// Discrete-event simulation of a live stream: frame `i` arrives at
/// `i / fps`, each emitted bundle keeps the depth stage busy for
/// `depth_latency_s` seconds.
pub fn simulate_stream(
    poses: &[RigidPose],
    fps: f64,
    depth_latency_s: f64,
    criteria: SamplingCriteria,
) -> Result<StreamSimulation, SamplerError> {
    let k = CameraIntrinsics {
        fx: 1.0,
        fy: 1.0,
        cx: 4.0,
        cy: 4.0,
        width: 8,
        height: 8,
    };
    let image = Arc::new(RgbImage::new(8, 8));
    let mut sampler = BundleSampler::new(criteria, k)?;
    let mut busy_until = f64::NEG_INFINITY;
    let mut references = Vec::new();
    let mut bundled = Vec::new();
    let mut max_window = 0;
    for (i, pose) in poses.iter().enumerate() {
        let t = i as f64 / fps;
        let kf = Keyframe {
            id: i as u64,
            timestamp: t,
            image: image.clone(),
            pose: *pose,
        };
        if let Some(b) = sampler.apply_backpressure(t < busy_until, kf)?.into_bundle() {
            busy_until = t + depth_latency_s;
            references.push(b.reference().id);
            bundled.extend(b.frames.iter().map(|f| f.id));
        }
        max_window = max_window.max(sampler.window_len());
    }
    Ok(StreamSimulation {
        stats: sampler.stats(),
        references,
        bundled,
        max_window,
    })
}
