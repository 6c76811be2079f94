//! End-to-end orchestration: keyframes → bundles → depth maps → surfel model.
//!
//! With `threads = 0` every stage runs on the calling thread. Otherwise
//! sampling, depth estimation and fusion each get a thread, connected by
//! bounded queues. Fusion consumes depth maps in bundle order, so both modes
//! produce the same model unless `realtime` pacing discards frames.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use log::{info, warn};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::fusion::{
    export_cloud, integrate_frame, register_frame, scale_depth, FusionError, RgbdFrame, SurfelMap,
};
use crate::geometry::{CameraIntrinsics, RigidPose, Trajectory, TrajectoryEntry};
use crate::eval::PointCloud;
use crate::io::Dataset;
use crate::matcher::DepthRange;
use crate::sampler::{BundleSampler, ImageBundle, Keyframe, SamplerError};
use crate::sgm::{hierarchical_estimate, DepthEstimate, DepthParams, SgmError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Depth(#[from] SgmError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Source of posed keyframes, in increasing id order.
pub trait Tracker {
    fn next_keyframe(&mut self) -> Option<Keyframe>;
}

/// Replays the poses stored with a dataset.
#[derive(Debug)]
pub struct ReplayTracker {
    frames: std::vec::IntoIter<Keyframe>,
}

impl ReplayTracker {
    pub fn new(dataset: &Dataset) -> Self {
        ReplayTracker {
            frames: dataset.keyframes().into_iter(),
        }
    }
}

impl Tracker for ReplayTracker {
    fn next_keyframe(&mut self) -> Option<Keyframe> {
        self.frames.next()
    }
}

/// Depth map estimated for one bundle's reference frame.
#[derive(Debug, Clone)]
pub struct BundleDepth {
    pub reference: Keyframe,
    pub estimate: DepthEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// No bundle could be formed, so nothing was reconstructed.
    NoBundles,
    /// Too many registrations failed.
    Failed,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::NoBundles => "no_bundles",
            RunStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub status: RunStatus,
    pub threaded: bool,
    pub frames: u64,
    pub frames_discarded: u64,
    pub bundles: u64,
    pub depth_maps_fused: usize,
    pub registrations: usize,
    pub registration_failures: usize,
    pub surfels: usize,
    pub sampling_time: Duration,
    pub depth_time: Duration,
    pub fusion_time: Duration,
    pub total_time: Duration,
    pub max_window: usize,
    pub max_depth_queue: usize,
    pub max_fusion_queue: usize,
}

impl RunReport {
    /// Bundles emitted per ingested frame.
    pub fn subsampling_ratio(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.bundles as f64 / self.frames as f64
        }
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.registrations == 0 {
            0.0
        } else {
            self.registration_failures as f64 / self.registrations as f64
        }
    }
}

/// One `key=value` pair per line.
impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mean_depth_ms = if self.bundles == 0 {
            0.0
        } else {
            self.depth_time.as_secs_f64() * 1e3 / self.bundles as f64
        };
        writeln!(f, "status={}", self.status)?;
        writeln!(f, "mode={}", if self.threaded { "pipelined" } else { "sequential" })?;
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "frames_discarded={}", self.frames_discarded)?;
        writeln!(f, "bundles={}", self.bundles)?;
        writeln!(f, "subsampling_ratio={:.6}", self.subsampling_ratio())?;
        writeln!(f, "depth_maps_fused={}", self.depth_maps_fused)?;
        writeln!(f, "registrations={}", self.registrations)?;
        writeln!(f, "registration_failures={}", self.registration_failures)?;
        writeln!(f, "surfels={}", self.surfels)?;
        writeln!(f, "sampling_s={:.3}", self.sampling_time.as_secs_f64())?;
        writeln!(f, "depth_s={:.3}", self.depth_time.as_secs_f64())?;
        writeln!(f, "mean_depth_ms={mean_depth_ms:.1}")?;
        writeln!(f, "fusion_s={:.3}", self.fusion_time.as_secs_f64())?;
        writeln!(f, "total_s={:.3}", self.total_time.as_secs_f64())?;
        writeln!(f, "max_window={}", self.max_window)?;
        writeln!(f, "max_depth_queue={}", self.max_depth_queue)?;
        write!(f, "max_fusion_queue={}", self.max_fusion_queue)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub map: SurfelMap,
    /// Fused pose of every integrated depth map.
    pub poses: Vec<TrajectoryEntry>,
    pub depth_maps: Vec<BundleDepth>,
    pub report: RunReport,
    export_min_confidence: f64,
}

impl PipelineOutput {
    pub fn trajectory(&self) -> Option<Trajectory> {
        Trajectory::new(self.poses.clone()).ok()
    }

    /// Surfels at or above the configured export confidence.
    pub fn cloud(&self) -> PointCloud {
        export_cloud(&self.map, self.export_min_confidence)
    }
}

struct DepthStage {
    range: DepthRange,
    params: DepthParams,
    delay: Duration,
}

impl DepthStage {
    fn run(&self, bundle: &ImageBundle) -> Result<BundleDepth, SgmError> {
        let estimate = hierarchical_estimate(bundle, &self.range, &self.params)?;
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(BundleDepth {
            reference: bundle.reference().clone(),
            estimate,
        })
    }
}

struct Fuser {
    map: SurfelMap,
    intrinsics: CameraIntrinsics,
    depth_scale: f64,
    /// Last fused pose and the input pose it replaced.
    last: Option<(RigidPose, RigidPose)>,
    poses: Vec<TrajectoryEntry>,
    registrations: usize,
    failures: usize,
}

impl Fuser {
    fn fuse(&mut self, item: &BundleDepth) -> Result<(), FusionError> {
        let kf = &item.reference;
        let depth = scale_depth(&item.estimate.depth, self.depth_scale)?;
        let frame = RgbdFrame::new(
            (*kf.image).clone(),
            depth,
            item.estimate.normals.clone(),
            self.intrinsics,
            kf.timestamp,
        )?;
        let pose = match self.last {
            Some((fused, input)) if !self.map.is_empty() => {
                self.registrations += 1;
                let init = fused.compose(&input.inverse().compose(&kf.pose));
                match register_frame(&self.map, &frame, &init) {
                    Ok(reg) => reg.pose,
                    Err(e) => {
                        self.failures += 1;
                        warn!("frame {}: registration failed, bundle skipped: {e}", kf.id);
                        return Ok(());
                    }
                }
            }
            // the first depth map bootstraps the model at its input pose
            _ => kf.pose,
        };
        integrate_frame(&mut self.map, &frame, &pose);
        self.last = Some((pose, kf.pose));
        self.poses.push(TrajectoryEntry {
            timestamp: kf.timestamp,
            pose,
        });
        Ok(())
    }
}

#[derive(Default)]
struct Counters {
    sampling: Duration,
    depth: Duration,
    fusion: Duration,
    max_window: usize,
    max_depth_queue: usize,
    max_fusion_queue: usize,
}

pub fn run_pipeline(config: &PipelineConfig, dataset: &Dataset) -> Result<PipelineOutput, PipelineError> {
    run_with_tracker(config, dataset.intrinsics, &mut ReplayTracker::new(dataset))
}

pub fn run_with_tracker(
    config: &PipelineConfig,
    intrinsics: CameraIntrinsics,
    tracker: &mut dyn Tracker,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let threads = config.effective_threads()?;
    let start = Instant::now();
    let mut sampler = BundleSampler::new(config.sampling_criteria(), intrinsics)?;
    let depth = DepthStage {
        range: config.depth_range()?,
        params: config.depth_params(),
        delay: Duration::from_millis(config.pipeline.depth_delay_ms),
    };
    let mut fuser = Fuser {
        map: SurfelMap::new(config.fusion_config())?,
        intrinsics,
        depth_scale: config.fusion.depth_scale,
        last: None,
        poses: Vec::new(),
        registrations: 0,
        failures: 0,
    };
    let mut counters = Counters::default();
    let depth_maps = if threads == 0 {
        run_sequential(&mut sampler, &depth, &mut fuser, tracker, &mut counters)?
    } else {
        run_threaded(config, &mut sampler, &depth, &mut fuser, tracker, &mut counters)?
    };

    let stats = sampler.stats();
    let failed = fuser.registrations > 0
        && fuser.failures as f64 > config.pipeline.max_failure_fraction * fuser.registrations as f64;
    let status = if stats.bundles_emitted == 0 {
        RunStatus::NoBundles
    } else if failed {
        RunStatus::Failed
    } else {
        RunStatus::Ok
    };
    let report = RunReport {
        status,
        threaded: threads > 0,
        frames: stats.frames_seen,
        frames_discarded: stats.frames_discarded,
        bundles: stats.bundles_emitted,
        depth_maps_fused: fuser.poses.len(),
        registrations: fuser.registrations,
        registration_failures: fuser.failures,
        surfels: fuser.map.len(),
        sampling_time: counters.sampling,
        depth_time: counters.depth,
        fusion_time: counters.fusion,
        total_time: start.elapsed(),
        max_window: counters.max_window,
        max_depth_queue: counters.max_depth_queue,
        max_fusion_queue: counters.max_fusion_queue,
    };
    info!(
        "{} frames, {} bundles, {} fused, {} registration failures: {}",
        report.frames, report.bundles, report.depth_maps_fused, report.registration_failures, report.status
    );
    Ok(PipelineOutput {
        map: fuser.map,
        poses: fuser.poses,
        depth_maps,
        report,
        export_min_confidence: config.fusion.export_min_confidence,
    })
}

fn run_sequential(
    sampler: &mut BundleSampler,
    depth: &DepthStage,
    fuser: &mut Fuser,
    tracker: &mut dyn Tracker,
    counters: &mut Counters,
) -> Result<Vec<BundleDepth>, PipelineError> {
    let mut maps = Vec::new();
    while let Some(kf) = tracker.next_keyframe() {
        let t = Instant::now();
        let bundle = sampler.push_keyframe(kf)?;
        counters.max_window = counters.max_window.max(sampler.window_len());
        counters.sampling += t.elapsed();
        let Some(bundle) = bundle else { continue };
        let t = Instant::now();
        let item = depth.run(&bundle)?;
        counters.depth += t.elapsed();
        let t = Instant::now();
        fuser.fuse(&item)?;
        counters.fusion += t.elapsed();
        maps.push(item);
    }
    Ok(maps)
}

fn run_threaded(
    config: &PipelineConfig,
    sampler: &mut BundleSampler,
    depth: &DepthStage,
    fuser: &mut Fuser,
    tracker: &mut dyn Tracker,
    counters: &mut Counters,
) -> Result<Vec<BundleDepth>, PipelineError> {
    let cap = config.pipeline.queue_capacity;
    let realtime = config.pipeline.realtime;
    let (bundle_tx, bundle_rx) = bounded::<ImageBundle>(cap);
    let (depth_tx, depth_rx) = bounded::<Result<BundleDepth, SgmError>>(cap);
    // bundles handed to the depth stage and not finished yet
    let in_flight = AtomicUsize::new(0);

    std::thread::scope(|s| {
        let in_flight = &in_flight;
        let depth_worker = s.spawn(move || {
            let mut busy = Duration::ZERO;
            let mut max_queue = 0;
            for bundle in bundle_rx {
                let t = Instant::now();
                let r = depth.run(&bundle);
                busy += t.elapsed();
                in_flight.fetch_sub(1, Ordering::SeqCst);
                let stop = r.is_err();
                if depth_tx.send(r).is_err() || stop {
                    break;
                }
                max_queue = max_queue.max(depth_tx.len());
            }
            (busy, max_queue)
        });
        let fusion_worker = s.spawn(move || -> Result<(Vec<BundleDepth>, Duration), PipelineError> {
            let mut maps = Vec::new();
            let mut busy = Duration::ZERO;
            for r in depth_rx {
                let item = r?;
                let t = Instant::now();
                fuser.fuse(&item)?;
                busy += t.elapsed();
                maps.push(item);
            }
            Ok((maps, busy))
        });

        let clock = Instant::now();
        let mut first_ts = None;
        let mut produced: Result<(), PipelineError> = Ok(());
        while let Some(kf) = tracker.next_keyframe() {
            if realtime {
                let t0 = *first_ts.get_or_insert(kf.timestamp);
                let due = Duration::from_secs_f64((kf.timestamp - t0).max(0.0));
                if let Some(wait) = due.checked_sub(clock.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            let t = Instant::now();
            let admitted = if realtime {
                sampler
                    .apply_backpressure(in_flight.load(Ordering::SeqCst) > 0, kf)
                    .map(|a| a.into_bundle())
            } else {
                sampler.push_keyframe(kf)
            };
            counters.max_window = counters.max_window.max(sampler.window_len());
            counters.sampling += t.elapsed();
            let bundle = match admitted {
                Ok(b) => b,
                Err(e) => {
                    produced = Err(e.into());
                    break;
                }
            };
            if let Some(bundle) = bundle {
                in_flight.fetch_add(1, Ordering::SeqCst);
                if bundle_tx.send(bundle).is_err() {
                    // a later stage stopped with an error
                    break;
                }
                counters.max_depth_queue = counters.max_depth_queue.max(bundle_tx.len());
            }
        }
        drop(bundle_tx);
        let (depth_busy, max_fusion_queue) = depth_worker.join().expect("depth stage panicked");
        counters.depth = depth_busy;
        counters.max_fusion_queue = max_fusion_queue;
        let fused = fusion_worker.join().expect("fusion stage panicked");
        produced?;
        let (maps, fusion_busy) = fused?;
        counters.fusion = fusion_busy;
        Ok(maps)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticScene;

    fn tiny_orbit(frames: usize) -> Dataset {
        let mut s = SyntheticScene::orbit_scene(frames, 4.5, 5);
        s.intrinsics = CameraIntrinsics::new(75.0, 75.0, 31.5, 23.5, 64, 48).unwrap();
        Dataset::from_synthetic(&s.render_all().unwrap()).unwrap()
    }

    #[test]
    fn static_poses_give_no_bundles() {
        let mut data = tiny_orbit(1);
        let e = data.poses.entries()[0];
        let entries = (0..8)
            .map(|i| TrajectoryEntry {
                timestamp: i as f64,
                pose: e.pose,
            })
            .collect();
        data.poses = Trajectory::new(entries).unwrap();
        data.images = vec![data.images[0].clone(); 8];
        let out = run_pipeline(&PipelineConfig::default(), &data).unwrap();
        assert_eq!(out.report.bundles, 0);
        assert_eq!(out.report.status, RunStatus::NoBundles);
        assert!(out.map.is_empty() && out.trajectory().is_none());
        assert!(out.report.to_string().contains("status=no_bundles"));
    }

    #[test]
    fn report_lines_are_key_value() {
        let out = run_pipeline(&PipelineConfig::default(), &tiny_orbit(10)).unwrap();
        assert_eq!(out.report.bundles, 2);
        assert_eq!(out.report.subsampling_ratio(), 0.2);
        for line in out.report.to_string().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(!k.is_empty() && !v.is_empty(), "{line}");
        }
    }

    #[test]
    fn bad_config_is_rejected_before_running() {
        let mut c = PipelineConfig::default();
        c.depth.d_min = -1.0;
        assert!(matches!(run_pipeline(&c, &tiny_orbit(5)), Err(PipelineError::Config(_))));
    }
}
