use std::collections::HashSet;

use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyfuse::eval::{
    align_clouds, ate_metrics, backproject_depth, cloud_rmse, depth_metrics, statistical_outlier_removal,
    voxel_downsample, AlignParams, EvalError, PointCloud,
};
use skyfuse::geometry::{CameraIntrinsics, RigidPose, SimilarityTransform, Trajectory, TrajectoryEntry};
use skyfuse::maps::DepthMap;

fn trajectory(points: &[Vector3<f64>]) -> Trajectory {
    Trajectory::new(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| TrajectoryEntry {
                timestamp: i as f64 * 0.1,
                pose: RigidPose::from_translation(*p),
            })
            .collect(),
    )
    .unwrap()
}

fn similarity(scale: f64, axis: Vector3<f64>, angle_deg: f64, t: Vector3<f64>) -> SimilarityTransform {
    SimilarityTransform::new(scale, RigidPose::from_axis_angle(&axis, angle_deg.to_radians(), t)).unwrap()
}

/// Gauss-Newton over (log scale, rotation vector, translation) with a
/// finite-difference Jacobian; independent of the closed form.
fn numeric_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Vec<f64> {
    let apply = |x: &Vector6<f64>, ls: f64, p: &Vector3<f64>| {
        let r = nalgebra::Rotation3::from_scaled_axis(Vector3::new(x[0], x[1], x[2]));
        r * p * ls.exp() + Vector3::new(x[3], x[4], x[5])
    };
    let residuals = |x: &Vector6<f64>, ls: f64| -> Vec<f64> {
        src.iter()
            .zip(dst)
            .flat_map(|(s, d)| {
                let e = apply(x, ls, s) - d;
                [e.x, e.y, e.z]
            })
            .collect()
    };
    let mut x = Vector6::zeros();
    let mut ls = 0.0;
    for _ in 0..100 {
        let r0 = residuals(&x, ls);
        let m = r0.len();
        let mut jac = nalgebra::DMatrix::zeros(m, 7);
        let h = 1e-7;
        for k in 0..7 {
            let (mut xp, mut lsp) = (x, ls);
            if k < 6 {
                xp[k] += h;
            } else {
                lsp += h;
            }
            let r1 = residuals(&xp, lsp);
            for i in 0..m {
                jac[(i, k)] = (r1[i] - r0[i]) / h;
            }
        }
        let rv = nalgebra::DVector::from_vec(r0);
        let step = (jac.transpose() * &jac).lu().solve(&(-(jac.transpose() * rv))).unwrap();
        for k in 0..6 {
            x[k] += step[k];
        }
        ls += step[6];
        if step.norm() < 1e-13 {
            break;
        }
    }
    let r = residuals(&x, ls);
    (0..src.len()).map(|i| (r[3 * i].powi(2) + r[3 * i + 1].powi(2) + r[3 * i + 2].powi(2)).sqrt()).collect()
}

#[test]
fn ate_identity_and_similarity() {
    let pts: Vec<_> = (0..10).map(|i| Vector3::new((i as f64).cos() * 5.0, (i as f64).sin() * 5.0, 0.3 * i as f64)).collect();
    let gt = trajectory(&pts);
    let m = ate_metrics(&gt, &gt).unwrap();
    assert!(m.rmse < 1e-12 && m.mae < 1e-12 && m.sigma < 1e-12);
    let sim = similarity(3.0, Vector3::new(1.0, 2.0, 0.5), 40.0, Vector3::new(4.0, -1.0, 2.0));
    let est = trajectory(&pts.iter().map(|p| sim.apply(p)).collect::<Vec<_>>());
    let m = ate_metrics(&est, &gt).unwrap();
    assert!(m.rmse < 1e-9 && m.mae < 1e-9);
    assert!(matches!(ate_metrics(&trajectory(&pts[..2]), &gt), Err(EvalError::TooFewMatches(2))));
}

#[test]
fn ate_displaced_corner_matches_numeric_fit() {
    let gt_pts = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ];
    let mut est_pts = gt_pts.clone();
    est_pts[2] += Vector3::new(0.4, 0.0, 0.0);
    let m = ate_metrics(&trajectory(&est_pts), &trajectory(&gt_pts)).unwrap();
    let errors = numeric_fit(&est_pts, &gt_pts);
    let n = errors.len() as f64;
    let mae = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let sigma = (errors.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / n).sqrt();
    assert!((m.rmse - rmse).abs() < 1e-6, "{} vs {rmse}", m.rmse);
    assert!((m.mae - mae).abs() < 1e-6);
    assert!((m.sigma - sigma).abs() < 1e-6);
    assert!(m.rmse > 0.05);
}

#[test]
fn ate_associates_by_time() {
    let pts: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0)).collect();
    let gt = trajectory(&pts);
    // shifted by less than half a period, plus one entry too far away
    let mut entries: Vec<_> = gt
        .entries()
        .iter()
        .map(|e| TrajectoryEntry {
            timestamp: e.timestamp + 0.04,
            pose: e.pose,
        })
        .collect();
    entries.push(TrajectoryEntry {
        timestamp: 10.0,
        pose: RigidPose::from_translation(Vector3::new(100.0, 0.0, 0.0)),
    });
    let m = ate_metrics(&Trajectory::new(entries).unwrap(), &gt).unwrap();
    assert_eq!(m.matched, 6);
    assert!(m.rmse < 1e-9);
}

#[test]
fn ate_invariant_to_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gt_pts: Vec<_> = (0..30)
        .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
        .collect();
    let est_pts: Vec<_> = gt_pts
        .iter()
        .map(|p| p + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
        .collect();
    let gt = trajectory(&gt_pts);
    let base = ate_metrics(&trajectory(&est_pts), &gt).unwrap();
    for s in [0.5, 4.0, 0.01] {
        let sim = similarity(s, Vector3::new(0.3, -1.0, 0.2), 123.0, Vector3::new(7.0, 1.0, -3.0));
        let moved = trajectory(&est_pts.iter().map(|p| sim.apply(p)).collect::<Vec<_>>());
        let m = ate_metrics(&moved, &gt).unwrap();
        for (a, b) in [(m.rmse, base.rmse), (m.mae, base.mae), (m.sigma, base.sigma)] {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }
}

fn map(values: &[f32]) -> DepthMap {
    DepthMap {
        width: values.len(),
        height: 1,
        data: values.to_vec(),
    }
}

#[test]
fn depth_metrics_hand_example() {
    let m = depth_metrics(&map(&[10.0, 22.0]), &map(&[10.0, 20.0]), 300.0).unwrap();
    // medians 16 and 15
    let s = 15.0 / 16.0;
    let d = [10.0 * s, 22.0 * s];
    let g = [10.0, 20.0];
    let rmse = (((d[0] - g[0]) * (d[0] - g[0]) + (d[1] - g[1]) * (d[1] - g[1])) / 2.0f64).sqrt();
    let mae = ((d[0] - g[0]).abs() / g[0] + (d[1] - g[1]).abs() / g[1]) / 2.0;
    assert!((m.rmse - rmse).abs() < 1e-12);
    assert!((m.mae - mae).abs() < 1e-12);
    assert_eq!(m.delta_125, 1.0);
    assert_eq!(m.delta_105, 0.5);
    assert_eq!(m.count, 2);
}

#[test]
fn depth_metrics_identity_scale_and_cap() {
    let gt = map(&[5.0, 12.0, 40.0, 350.0, 0.0, 8.0]);
    let m = depth_metrics(&gt, &gt, 300.0).unwrap();
    assert_eq!((m.rmse, m.mae, m.delta_125, m.delta_105), (0.0, 0.0, 1.0, 1.0));
    assert_eq!(m.count, 4);
    let est = map(&gt.data.iter().map(|d| d * 7.0).collect::<Vec<_>>());
    let m7 = depth_metrics(&est, &gt, 300.0).unwrap();
    assert_eq!((m7.rmse, m7.mae, m7.delta_125, m7.delta_105), (0.0, 0.0, 1.0, 1.0));
    assert!(matches!(
        depth_metrics(&map(&[0.0, 1.0]), &map(&[1.0, 0.0]), 300.0),
        Err(EvalError::NoValidPixels)
    ));
    assert!(depth_metrics(&map(&[1.0]), &map(&[1.0, 1.0]), 300.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn delta_ordering_and_scale_invariance(
        pairs in prop::collection::vec((0.5f32..100.0, 0.5f32..100.0), 1..40),
        exp in -6i32..6,
    ) {
        let est = map(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let gt = map(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let m = depth_metrics(&est, &gt, 300.0).unwrap();
        prop_assert!(0.0 <= m.delta_105 && m.delta_105 <= m.delta_125 && m.delta_125 <= 1.0);
        // power-of-two scales are exact in floating point
        let c = 2f32.powi(exp);
        let scaled = map(&est.data.iter().map(|d| d * c).collect::<Vec<_>>());
        let ms = depth_metrics(&scaled, &gt, 300.0).unwrap();
        prop_assert_eq!((ms.rmse, ms.mae, ms.delta_125, ms.delta_105), (m.rmse, m.mae, m.delta_125, m.delta_105));
    }
}

fn plane_grid(n: usize, spacing: f64) -> PointCloud {
    PointCloud::new(
        (0..n * n)
            .map(|i| Vector3::new((i % n) as f64 * spacing, (i / n) as f64 * spacing, 0.0))
            .collect(),
    )
}

#[test]
fn cloud_rmse_cases() {
    let gt = plane_grid(60, 0.01);
    let subset = gt.select(&(0..gt.len()).step_by(7).collect::<Vec<_>>());
    assert_eq!(cloud_rmse(&subset, &gt), 0.0);
    // interior points lifted off the plane by 0.1
    let lifted = PointCloud::new(
        (10..50)
            .flat_map(|y| (10..50).map(move |x| Vector3::new(x as f64 * 0.01, y as f64 * 0.01, 0.1)))
            .collect(),
    );
    assert!((cloud_rmse(&lifted, &gt) - 0.1).abs() < 1e-12);
    let shifted = PointCloud::new(subset.points.iter().map(|p| p + Vector3::new(0.1, 0.0, 0.0)).collect());
    // points pushed past the grid edge are further away than 0.1
    let r = cloud_rmse(&shifted, &gt);
    assert!(r <= 0.1 + 1e-12 && r > 0.0);
}

#[test]
fn outlier_removal_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pts: Vec<_> = (0..500)
        .map(|_| Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
        .collect();
    pts.push(Vector3::new(100.0, 0.0, 0.0));
    let cloud = PointCloud::new(pts.clone());
    let kept = statistical_outlier_removal(&cloud, 100, 1.0).unwrap();
    assert!(!kept.points.contains(&Vector3::new(100.0, 0.0, 0.0)));
    // direct mean-distance oracle decides the removals
    let means: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (p - q).norm()).collect();
            d.sort_by(f64::total_cmp);
            d[..100].iter().sum::<f64>() / 100.0
        })
        .collect();
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    let sigma = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
    let expected: Vec<_> = (0..pts.len()).filter(|&i| means[i] <= mu + sigma).map(|i| pts[i]).collect();
    assert_eq!(kept.points, expected);
    assert!(kept.len() > 400);

    let same = PointCloud::new(vec![Vector3::new(1.0, 1.0, 1.0); 101]);
    assert_eq!(statistical_outlier_removal(&same, 100, 1.0).unwrap().len(), 101);
    assert!(statistical_outlier_removal(&PointCloud::new(pts[..100].to_vec()), 100, 1.0).is_err());
}

#[test]
fn voxel_downsample_cases() {
    let two = PointCloud::new(vec![Vector3::new(0.0021, 0.0, 0.0), Vector3::new(0.0031, 0.0, 0.0)]);
    let out = voxel_downsample(&two, 0.01).unwrap();
    assert_eq!(out.len(), 1);
    assert!((out.points[0] - Vector3::new(0.0026, 0.0, 0.0)).norm() < 1e-15);

    let grid = PointCloud::new(
        (0..1000)
            .map(|i| Vector3::new((i % 10) as f64 * 0.02, ((i / 10) % 10) as f64 * 0.02, (i / 100) as f64 * 0.02))
            .collect(),
    );
    assert_eq!(voxel_downsample(&grid, 0.01).unwrap().len(), 1000);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<_> = (0..3000)
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let lo = pts.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let keys: HashSet<(i64, i64, i64)> = pts
        .iter()
        .map(|p| {
            let q = (p - lo) / 0.2;
            (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
        })
        .collect();
    let cloud = PointCloud::new(pts.clone());
    let out = voxel_downsample(&cloud, 0.2).unwrap();
    assert_eq!(out.len(), keys.len());
    // order-independent output
    let mut rev = pts;
    rev.reverse();
    let out_rev = voxel_downsample(&PointCloud::new(rev), 0.2).unwrap();
    for (a, b) in out.points.iter().zip(&out_rev.points) {
        assert!((a - b).norm() < 1e-12);
    }
    assert!(voxel_downsample(&cloud, 0.0).is_err());
}

#[test]
fn voxel_downsample_averages_attributes() {
    let mut c = PointCloud::new(vec![Vector3::zeros(), Vector3::new(0.001, 0.0, 0.0)]);
    c.colors = Some(vec![[10, 20, 30], [20, 40, 61]]);
    c.normals = Some(vec![Vector3::x(), Vector3::y()]);
    let out = voxel_downsample(&c, 0.01).unwrap();
    assert_eq!(out.colors.unwrap()[0], [15, 30, 46]);
    assert!((out.normals.unwrap()[0] - Vector3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-12);
}

#[test]
fn backprojection_cases() {
    let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap();
    let mut d = DepthMap::invalid(128, 96);
    d.data[48 * 128 + 64] = 10.0;
    let c = backproject_depth(&d, None, &k, &RigidPose::identity());
    assert_eq!(c.points, vec![Vector3::new(0.0, 0.0, 10.0)]);

    let pose = RigidPose::from_axis_angle(&Vector3::new(0.1, 1.0, 0.2), 0.4, Vector3::new(1.0, -2.0, 0.5));
    let d = DepthMap::from_fn(128, 96, |x, y| 5.0 + 0.01 * x as f32 + 0.02 * y as f32);
    let cloud = backproject_depth(&d, None, &k, &pose);
    let inv = pose.inverse();
    for (i, p) in cloud.points.iter().enumerate() {
        let uv = k.project(&inv.transform_point(p)).unwrap();
        assert!((uv.x - (i % 128) as f64).abs() < 1e-9 && (uv.y - (i / 128) as f64).abs() < 1e-9);
    }

    // fronto-parallel plane z = 7 in camera frame
    let d = DepthMap::from_fn(128, 96, |_, _| 7.0);
    let cloud = backproject_depth(&d, None, &k, &pose);
    let n = pose.transform_vector(&Vector3::z());
    let p0 = pose.transform_point(&Vector3::new(0.0, 0.0, 7.0));
    for p in &cloud.points {
        assert!((p - p0).dot(&n).abs() < 1e-9);
    }
}

/// Dense samples on the visible faces of a box standing on a ground patch.
fn structure(spacing: f64) -> PointCloud {
    let mut pts = Vec::new();
    let steps = |a: f64, b: f64| {
        let n = ((b - a) / spacing).round() as usize;
        (0..=n).map(move |i| a + i as f64 * spacing)
    };
    for x in steps(-2.0, 2.0) {
        for y in steps(-2.0, 2.0) {
            if x.abs() > 0.5 || y.abs() > 0.5 {
                pts.push(Vector3::new(x, y, 0.0));
            }
        }
    }
    for a in steps(-0.5, 0.5) {
        for z in steps(0.0, 1.2) {
            pts.push(Vector3::new(a, -0.5, z));
            pts.push(Vector3::new(a, 0.5, z));
            pts.push(Vector3::new(-0.5, a, z));
            pts.push(Vector3::new(0.5, a, z));
        }
        for b in steps(-0.5, 0.5) {
            pts.push(Vector3::new(a, b, 1.2));
        }
    }
    PointCloud::new(pts)
}

#[test]
fn align_identity() {
    let gt = structure(0.1);
    let (aligned, t) = align_clouds(&gt, &gt, &SimilarityTransform::identity(), &AlignParams::default()).unwrap();
    assert!((t.scale - 1.0).abs() < 1e-9);
    assert!(t.rigid.translation().norm() < 1e-9);
    assert!(cloud_rmse(&aligned, &gt) < 1e-9);
}

#[test]
fn align_recovers_similarity() {
    let gt = structure(0.05);
    let truth = similarity(1.7, Vector3::new(0.2, 0.3, 1.0), 25.0, Vector3::new(3.0, -1.0, 0.5));
    let sub: Vec<usize> = (0..gt.len()).step_by(2).collect();
    let est = gt.select(&sub).transformed(&truth);
    // trajectory alignment is only approximately right
    let rough = similarity(1.01, Vector3::new(1.0, 0.0, 0.0), 1.0, Vector3::new(0.03, 0.02, 0.0)).compose(&truth.inverse());
    let (aligned, t) = align_clouds(&est, &gt, &rough, &AlignParams::default()).unwrap();
    let composite = t.compose(&truth);
    assert!((composite.scale - 1.0).abs() < 1e-6, "{}", composite.scale);
    assert!(composite.rigid.quaternion().angle() < 1e-6);
    assert!(composite.rigid.translation().norm() < 1e-6);
    assert!(cloud_rmse(&aligned, &gt) <= 0.05);
}

#[test]
fn align_without_overlap_fails() {
    let gt = structure(0.1);
    let far = SimilarityTransform::new(1.0, RigidPose::from_translation(Vector3::new(10.0 * gt.diagonal(), 0.0, 0.0))).unwrap();
    let est = gt.transformed(&far);
    assert!(matches!(
        align_clouds(&est, &gt, &SimilarityTransform::identity(), &AlignParams::default()),
        Err(EvalError::Alignment(_))
    ));
}
