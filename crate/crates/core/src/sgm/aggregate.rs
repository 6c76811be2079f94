//! Semi-global path aggregation on (possibly dynamic) cost volumes.
//!
//! Along each path direction `r`:
//!
//! ```text
//! L(p, d) = C(p, d) + min(L(p-r, d-o), L(p-r, d-o±1) + P1, min_k L(p-r, k) + P2)
//!                   - min_k L(p-r, k)
//! ```
//!
//! where `o` is the zero-cost transition shift (zero for standard SGM).
//! Predecessor labels outside the predecessor's plane window are
//! unavailable. Pixels on the image border along `r` start with `L = C`.

use crate::geometry::CameraIntrinsics;
use crate::maps::{DepthMap, NormalMap};
use crate::matcher::{CostVolume, PlaneSet, SENTINEL};

use super::SgmError;

/// The eight path directions `(dx, dy)`; the first four are used for
/// four-path aggregation.
pub const DIRECTIONS: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SgmParams {
    pub p1: u32,
    pub p2: u32,
    pub path_count: usize,
}

impl Default for SgmParams {
    fn default() -> Self {
        SgmParams {
            p1: 24,
            p2: 96,
            path_count: 8,
        }
    }
}

impl SgmParams {
    pub fn new(p1: u32, p2: u32, path_count: usize) -> Result<Self, SgmError> {
        let p = SgmParams { p1, p2, path_count };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SgmError> {
        if self.p1 > self.p2 {
            return Err(SgmError::Params(format!(
                "p1 ({}) must not exceed p2 ({})",
                self.p1, self.p2
            )));
        }
        if self.path_count != 4 && self.path_count != 8 {
            return Err(SgmError::Params(format!(
                "path_count must be 4 or 8, got {}",
                self.path_count
            )));
        }
        Ok(())
    }

    pub fn directions(&self) -> &'static [(i32, i32)] {
        &DIRECTIONS[..self.path_count]
    }
}

/// Shift of the zero-cost transition, in plane indices, for the step from
/// `(x - dx, y - dy)` to `(x, y)`.
pub trait TransitionShift {
    fn shift(&self, x: usize, y: usize, dx: i32, dy: i32) -> i32;
}

/// Standard SGM: no shift.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoShift;

impl TransitionShift for NoShift {
    #[inline]
    fn shift(&self, _: usize, _: usize, _: i32, _: i32) -> i32 {
        0
    }
}

/// Largest shift magnitude applied by [`TangentPlaneShift`].
pub const MAX_SHIFT: i32 = 2;

/// Surface-normal-aware shift: the expected plane-index change between the
/// predecessor and the current pixel, from intersecting the predecessor's
/// viewing ray with the prior tangent plane at the current pixel.
pub struct TangentPlaneShift<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub depth: &'a DepthMap,
    pub normals: &'a NormalMap,
    pub planes: &'a PlaneSet,
}

impl TransitionShift for TangentPlaneShift<'_> {
    fn shift(&self, x: usize, y: usize, dx: i32, dy: i32) -> i32 {
        let (Some(d), Some(n)) = (self.depth.get(x, y), self.normals.get(x, y)) else {
            return 0;
        };
        let k = self.intrinsics;
        let point = k.backproject(x as f64, y as f64, d as f64);
        let ray = k.ray(x as f64 - dx as f64, y as f64 - dy as f64);
        let denom = n.dot(&ray);
        if denom.abs() < 1e-9 {
            return 0;
        }
        let z = n.dot(&point) / denom;
        if !(z > 0.0) || !z.is_finite() {
            return 0;
        }
        let delta = self.planes.fractional_index(d as f64) - self.planes.fractional_index(z);
        (delta.round() as i32).clamp(-MAX_SHIFT, MAX_SHIFT)
    }
}

/// Standard SGM aggregation.
pub fn sgm_aggregate(volume: &CostVolume, params: &SgmParams) -> Result<CostVolume, SgmError> {
    aggregate_with(volume, params, &NoShift)
}

/// SGM with surface-normal priors. Pixels without a valid prior depth and
/// normal fall back to the standard transition.
pub fn sgm_sn_aggregate(
    volume: &CostVolume,
    params: &SgmParams,
    prior_normals: &NormalMap,
    prior_depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
) -> Result<CostVolume, SgmError> {
    if prior_depth.width != volume.width
        || prior_depth.height != volume.height
        || prior_normals.width != volume.width
        || prior_normals.height != volume.height
    {
        return Err(SgmError::Shape("prior maps do not match the cost volume".into()));
    }
    let shift = TangentPlaneShift {
        intrinsics,
        depth: prior_depth,
        normals: prior_normals,
        planes: &volume.planes,
    };
    aggregate_with(volume, params, &shift)
}

/// Aggregation with an arbitrary transition-shift strategy.
pub fn aggregate_with(
    volume: &CostVolume,
    params: &SgmParams,
    shift: &impl TransitionShift,
) -> Result<CostVolume, SgmError> {
    params.validate()?;
    let (w, h) = (volume.width, volume.height);
    let substitute = volume.max_cost;
    let raw: Vec<u32> = volume
        .costs()
        .iter()
        .map(|&c| if c == SENTINEL { substitute } else { c })
        .collect();
    let mut total = vec![0u32; raw.len()];
    let mut path = vec![0u32; raw.len()];
    let mut path_min = vec![0u32; w * h];
    let mut starts = Vec::with_capacity(w * h);
    let mut acc = 0;
    for p in 0..w * h {
        starts.push(acc);
        acc += volume.count(p);
    }

    for &(dx, dy) in params.directions() {
        let rows: Box<dyn Iterator<Item = usize>> = if dy < 0 {
            Box::new((0..h).rev())
        } else {
            Box::new(0..h)
        };
        for y in rows {
            let cols: Box<dyn Iterator<Item = usize>> = if dx < 0 {
                Box::new((0..w).rev())
            } else {
                Box::new(0..w)
            };
            for x in cols {
                let p = y * w + x;
                let (o_p, c_p, s_p) = (volume.offset(p), volume.count(p), starts[p]);
                let px = x as i64 - dx as i64;
                let py = y as i64 - dy as i64;
                let mut m = u32::MAX;
                if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                    for i in 0..c_p {
                        let v = raw[s_p + i];
                        path[s_p + i] = v;
                        m = m.min(v);
                    }
                } else {
                    let q = py as usize * w + px as usize;
                    let (o_q, c_q, s_q) = (volume.offset(q) as i64, volume.count(q) as i64, starts[q]);
                    let min_q = path_min[q];
                    let o = shift.shift(x, y, dx, dy) as i64;
                    let prev = |path: &[u32], label: i64| -> Option<u32> {
                        let i = label - o_q;
                        (i >= 0 && i < c_q).then(|| path[s_q + i as usize])
                    };
                    for i in 0..c_p {
                        let d = (o_p + i) as i64 - o;
                        let mut best = min_q + params.p2;
                        if let Some(v) = prev(&path, d) {
                            best = best.min(v);
                        }
                        if let Some(v) = prev(&path, d - 1) {
                            best = best.min(v + params.p1);
                        }
                        if let Some(v) = prev(&path, d + 1) {
                            best = best.min(v + params.p1);
                        }
                        let v = raw[s_p + i] + best - min_q;
                        path[s_p + i] = v;
                        m = m.min(v);
                    }
                }
                path_min[p] = m;
            }
        }
        for (t, v) in total.iter_mut().zip(&path) {
            *t += v;
        }
    }

    for p in 0..w * h {
        if volume.is_sentinel_only(p) {
            let c = volume.count(p);
            total[starts[p]..starts[p] + c].iter_mut().for_each(|v| *v = SENTINEL);
        }
    }
    let max_cost = (params.path_count as u32) * (substitute + params.p2);
    Ok(volume.with_costs(total, max_cost))
}
