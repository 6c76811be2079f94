mod common;

use skyfuse::config::PipelineConfig;
use skyfuse::pipeline::{run_pipeline, RunStatus};

use common::{orbit, pose_jump, subset};

#[test]
fn threaded_run_matches_sequential() {
    let data = orbit(25, 128, 4);
    let seq = run_pipeline(&PipelineConfig::default(), &data).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.pipeline.threads = 3;
    let par = run_pipeline(&cfg, &data).unwrap();
    assert!(!seq.report.threaded && par.report.threaded);
    assert_eq!(seq.report.bundles, 5);
    assert_eq!(seq.poses, par.poses);
    assert_eq!(seq.map.surfels(), par.map.surfels());
    assert_eq!(seq.report.registration_failures, 0);
    assert!(par.report.max_depth_queue <= cfg.pipeline.queue_capacity);
    assert!(par.report.max_fusion_queue <= cfg.pipeline.queue_capacity);
}

#[test]
fn repeated_runs_are_identical() {
    let data = orbit(15, 96, 6);
    let a = run_pipeline(&PipelineConfig::default(), &data).unwrap();
    let b = run_pipeline(&PipelineConfig::default(), &data).unwrap();
    assert_eq!(a.poses, b.poses);
    assert_eq!(a.cloud(), b.cloud());
}

#[test]
fn tracking_gap_terminates() {
    let data = subset(&orbit(60, 128, 8), |i| !(20..40).contains(&i));
    let out = run_pipeline(&PipelineConfig::default(), &data).unwrap();
    assert_eq!(out.report.frames, 40);
    assert!(out.report.bundles >= 7);
    // the model never covers the far side of the gap
    assert!(out.report.registration_failures > 0);
    assert_eq!(out.report.depth_maps_fused + out.report.registration_failures, out.report.bundles as usize);
}

#[test]
fn pose_jump_fails_the_run() {
    let data = pose_jump(&orbit(40, 128, 9), 20);
    let out = run_pipeline(&PipelineConfig::default(), &data).unwrap();
    assert!(out.report.registration_failures > 0);
    assert!(out.report.failure_fraction() > 0.25);
    assert_eq!(out.report.status, RunStatus::Failed);
    assert!(out.report.to_string().contains("status=failed"));
}

#[test]
fn realtime_backpressure_bounds_queues() {
    let data = orbit(60, 96, 10);
    let mut cfg = PipelineConfig::default();
    cfg.pipeline.threads = 3;
    cfg.pipeline.realtime = true;
    cfg.pipeline.depth_delay_ms = 220;
    let out = run_pipeline(&cfg, &data).unwrap();
    let r = &out.report;
    assert!(r.frames_discarded > 0);
    assert!(r.max_window <= 5);
    assert!(r.max_depth_queue <= cfg.pipeline.queue_capacity);
    assert!(r.max_fusion_queue <= cfg.pipeline.queue_capacity);
    assert!(r.bundles >= 1);
    assert_eq!(r.frames, 60);
}
