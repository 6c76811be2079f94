//! Projective integration of a registered frame into the surfel model.

use nalgebra::Vector3;

use crate::geometry::RigidPose;

use super::render::point_index_map;
use super::{RgbdFrame, Surfel, SurfelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegrationStats {
    pub associated: usize,
    pub inserted: usize,
}

struct Sample {
    point: Vector3<f64>,
    normal: Option<Vector3<f64>>,
    fallback_normal: Vector3<f64>,
    color: [f64; 3],
    radius: f64,
}

/// Fuses every valid pixel of `frame`, placed at `pose`, into the map.
///
/// Association looks for surfels projecting (rounded) into the pixel's
/// 3×3 neighbourhood. Candidates must agree in depth within
/// `depth_tolerance` and, when the pixel has a normal, in orientation
/// within `normal_tolerance_deg`; the one closest in space wins.
/// Associated surfels take a confidence-weighted average; the remaining
/// pixels become new surfels.
pub fn integrate_frame(map: &mut SurfelMap, frame: &RgbdFrame, pose: &RigidPose) -> IntegrationStats {
    let k = frame.intrinsics();
    let (w, h) = (k.width, k.height);
    let cfg = map.config().clone();
    let cos_gate = cfg.normal_tolerance_deg.to_radians().cos();
    let index = point_index_map(map, pose, k);
    let stamp = map.frame_counter;

    let mut updates: Vec<(usize, Sample)> = Vec::new();
    let mut inserts: Vec<Sample> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some(d) = frame.depth().get(x, y) else {
                continue;
            };
            let d = d as f64;
            let cam = k.backproject(x as f64, y as f64, d);
            let sample = Sample {
                point: pose.transform_point(&cam),
                normal: frame.normals().get(x, y).map(|n| pose.transform_vector(&n)),
                fallback_normal: pose.transform_vector(&(-cam.normalize())),
                color: frame.color().get(x, y).map(f64::from),
                radius: d * std::f64::consts::SQRT_2 / k.fx,
            };
            let mut best: Option<(usize, f64)> = None;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let Some((i, z)) = index[yy * w + xx] else {
                        continue;
                    };
                    if (z - d).abs() >= cfg.depth_tolerance * d {
                        continue;
                    }
                    let s = &map.surfels[i];
                    if let Some(n) = sample.normal {
                        if n.dot(&s.normal) <= cos_gate {
                            continue;
                        }
                    }
                    let dist = (s.position - sample.point).norm();
                    if best.is_none_or(|(_, b)| dist < b) {
                        best = Some((i, dist));
                    }
                }
            }
            match best {
                Some((i, _)) => updates.push((i, sample)),
                None => inserts.push(sample),
            }
        }
    }

    let stats = IntegrationStats {
        associated: updates.len(),
        inserted: inserts.len(),
    };
    let w_new = cfg.initial_weight;
    for (i, sample) in updates {
        let s = &mut map.surfels[i];
        let w_old = s.confidence;
        let total = w_old + w_new;
        s.position = (s.position * w_old + sample.point * w_new) / total;
        if let Some(n) = sample.normal {
            let blended = s.normal * w_old + n * w_new;
            if blended.norm() > 1e-12 {
                s.normal = blended.normalize();
            }
        }
        for c in 0..3 {
            s.color[c] = (s.color[c] * w_old + sample.color[c] * w_new) / total;
        }
        s.confidence = total;
        s.last_seen = stamp;
    }
    for sample in inserts {
        map.surfels.push(Surfel {
            position: sample.point,
            normal: sample.normal.unwrap_or(sample.fallback_normal),
            radius: sample.radius,
            color: sample.color,
            confidence: w_new,
            last_seen: stamp,
        });
    }
    map.frame_counter += 1;
    stats
}
