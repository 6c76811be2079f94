//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;
use skyfuse::geometry::{CameraIntrinsics, RigidPose, Trajectory, TrajectoryEntry};
use skyfuse::io::Dataset;
use skyfuse::matcher::{CostVolume, PlaneSet};
use skyfuse::synth::SyntheticScene;

pub fn planes(n: usize) -> PlaneSet {
    PlaneSet::new((0..n).map(|i| 100.0 / (1.0 + i as f64)).collect()).unwrap()
}

pub fn random_volume(rng: &mut impl Rng, w: usize, h: usize, n: usize, max: u32) -> CostVolume {
    let costs = (0..w * h * n).map(|_| rng.random_range(0..=max)).collect();
    CostVolume::from_dense(w, h, planes(n), costs).unwrap()
}

/// Random dynamic windows over `n` planes.
pub fn random_dynamic_volume(rng: &mut impl Rng, w: usize, h: usize, n: usize, max: u32) -> CostVolume {
    let mut offsets = Vec::new();
    let mut counts = Vec::new();
    let mut costs = Vec::new();
    for _ in 0..w * h {
        let o = rng.random_range(0..n);
        let c = rng.random_range(1..=n - o);
        offsets.push(o as u32);
        counts.push(c as u32);
        costs.extend((0..c).map(|_| rng.random_range(0..=max)));
    }
    CostVolume::from_windows(w, h, planes(n), offsets, counts, costs, max).unwrap()
}

fn penalty(d: i64, k: i64, p1: u32, p2: u32) -> i64 {
    match (d - k).abs() {
        0 => 0,
        1 => p1 as i64,
        _ => p2 as i64,
    }
}

/// Costs per pixel as `plane -> cost` for the labels inside the window.
fn label_costs(v: &CostVolume, p: usize) -> Vec<(i64, i64)> {
    let o = v.offset(p);
    v.window(p)
        .iter()
        .enumerate()
        .map(|(i, &c)| ((o + i) as i64, c as i64))
        .collect()
}

/// Unnormalized path cost: minimum over label sequences ending in `d` of
/// data terms plus pairwise penalties. The normalized recurrence equals
/// this minus the predecessor's minimum.
fn path_costs(v: &CostVolume, dx: i32, dy: i32, p1: u32, p2: u32, shift: &dyn Fn(usize, usize) -> i64) -> Vec<Vec<i64>> {
    let (w, h) = (v.width as i64, v.height as i64);
    let mut raw: Vec<Option<Vec<i64>>> = vec![None; (w * h) as usize];
    let mut out = vec![Vec::new(); (w * h) as usize];
    // visit pixels in order of their distance to the path start
    let mut order: Vec<(i64, i64)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    order.sort_by_key(|&(x, y)| (x * dx as i64 + y * dy as i64, y, x));
    for (x, y) in order {
        let p = (y * w + x) as usize;
        let labels = label_costs(v, p);
        let (qx, qy) = (x - dx as i64, y - dy as i64);
        let inside = qx >= 0 && qy >= 0 && qx < w && qy < h;
        let values: Vec<i64> = if !inside {
            labels.iter().map(|&(_, c)| c).collect()
        } else {
            let q = (qy * w + qx) as usize;
            let prev = raw[q].as_ref().expect("predecessor visited first");
            let prev_labels = label_costs(v, q);
            let o = shift(x as usize, y as usize);
            labels
                .iter()
                .map(|&(d, c)| {
                    let best = prev_labels
                        .iter()
                        .zip(prev)
                        .map(|(&(k, _), &l)| l + penalty(d - o, k, p1, p2))
                        .min()
                        .unwrap();
                    c + best
                })
                .collect()
        };
        let normalized = if inside {
            let q = (qy * w + qx) as usize;
            let m = *raw[q].as_ref().unwrap().iter().min().unwrap();
            values.iter().map(|v| v - m).collect()
        } else {
            values.clone()
        };
        raw[p] = Some(values);
        out[p] = normalized;
    }
    out
}

/// Aggregated costs summed over `directions`, in the volume's storage order.
pub fn sgm_oracle(
    v: &CostVolume,
    directions: &[(i32, i32)],
    p1: u32,
    p2: u32,
    shift: &dyn Fn(usize, usize, i32, i32) -> i64,
) -> Vec<u64> {
    let n = v.width * v.height;
    let mut total: Vec<Vec<i64>> = (0..n).map(|p| vec![0; v.count(p)]).collect();
    for &(dx, dy) in directions {
        let l = path_costs(v, dx, dy, p1, p2, &|x, y| shift(x, y, dx, dy));
        for p in 0..n {
            for (t, c) in total[p].iter_mut().zip(&l[p]) {
                *t += c;
            }
        }
    }
    total.into_iter().flatten().map(|c| c as u64).collect()
}

/// Minimum over all label sequences along one row, left to right, by
/// enumeration. Returns the unnormalized cost per (pixel, label).
pub fn enumerate_row(costs: &[Vec<u32>], p1: u32, p2: u32) -> Vec<Vec<i64>> {
    let n = costs.len();
    let labels = costs[0].len();
    let mut best = vec![vec![i64::MAX; labels]; n];
    let total = labels.pow(n as u32);
    for code in 0..total {
        let mut seq = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            seq.push(c % labels);
            c /= labels;
        }
        let mut acc = 0i64;
        for i in 0..n {
            acc += costs[i][seq[i]] as i64;
            if i > 0 {
                acc += penalty(seq[i] as i64, seq[i - 1] as i64, p1, p2);
            }
            // prefix ending at i with label seq[i]
            best[i][seq[i]] = best[i][seq[i]].min(acc);
        }
    }
    best
}

/// Orbit dataset at `width` pixels, focal length scaled from the default
/// camera.
pub fn orbit(frames: usize, width: usize, seed: u64) -> Dataset {
    let mut s = SyntheticScene::orbit_scene(frames, 4.8, seed);
    let f = 300.0 * width as f64 / 256.0;
    let height = width * 3 / 4;
    s.intrinsics =
        CameraIntrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height).unwrap();
    Dataset::from_synthetic(&s.render_all().unwrap()).unwrap()
}

/// Keeps the frames whose index satisfies `keep`, timestamps unchanged.
pub fn subset(data: &Dataset, keep: impl Fn(usize) -> bool) -> Dataset {
    let idx: Vec<usize> = (0..data.len()).filter(|&i| keep(i)).collect();
    let pick = |t: &Trajectory| Trajectory::new(idx.iter().map(|&i| t.entries()[i]).collect()).unwrap();
    Dataset {
        intrinsics: data.intrinsics,
        poses: pick(&data.poses),
        images: idx.iter().map(|&i| data.images[i].clone()).collect(),
        groundtruth: data.groundtruth.as_ref().map(pick),
        depth: idx.iter().map(|&i| data.depth[i].clone()).collect(),
        gt_cloud: data.gt_cloud.clone(),
    }
}

/// Input poses from frame `from` on are moved by a fixed world offset, as if
/// the tracker had jumped.
pub fn pose_jump(data: &Dataset, from: usize) -> Dataset {
    let jump = RigidPose::from_axis_angle(&Vector3::z(), 35f64.to_radians(), Vector3::new(3.0, -2.0, 1.0));
    let entries = data
        .poses
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| TrajectoryEntry {
            timestamp: e.timestamp,
            pose: if i >= from { jump.compose(&e.pose) } else { e.pose },
        })
        .collect();
    Dataset {
        poses: Trajectory::new(entries).unwrap(),
        ..data.clone()
    }
}
