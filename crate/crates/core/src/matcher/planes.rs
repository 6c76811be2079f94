//! Sweep-plane placement.
//!
//! Planes are spaced so that moving from one plane to the next displaces
//! the warped image corners by at most one pixel in every matching view.
//! For a pixel `x` the warp through the plane of inverse depth `w` is
//! `a + w·b` (homogeneous) with `a = K R K⁻¹ x` and `b = K t`; the pixel
//! displacement between `w0` and `w0 + Δ` is `Δ·|c| / (D(w0)·D(w0+Δ))`
//! where `c = a_z·b_xy − b_z·a_xy` and `D(w) = a_z + w·b_z`. Setting it to
//! one pixel gives `Δ = D(w0)² / (|c| − D(w0)·b_z)` in closed form.

use nalgebra::Vector3;

use crate::geometry::{relative_pose, CameraIntrinsics, RigidPose};

use super::MatchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
}

impl DepthRange {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self, MatchError> {
        if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
            return Err(MatchError::Config(format!(
                "depth range must satisfy 0 < d_min < d_max, got [{d_min}, {d_max}]"
            )));
        }
        Ok(DepthRange { d_min, d_max })
    }
}

/// Plane depths in strictly decreasing order, `d_max` first.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSet {
    depths: Vec<f64>,
}

impl PlaneSet {
    pub fn new(depths: Vec<f64>) -> Result<Self, MatchError> {
        if depths.is_empty() {
            return Err(MatchError::Config("plane set is empty".into()));
        }
        if depths.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(MatchError::Config("plane depths must be positive".into()));
        }
        if depths.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(MatchError::Config(
                "plane depths must be strictly decreasing".into(),
            ));
        }
        Ok(PlaneSet { depths })
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    #[inline]
    pub fn depth(&self, index: usize) -> f64 {
        self.depths[index]
    }

    /// Continuous plane index of `depth`, interpolated in inverse depth and
    /// clamped to `[0, len-1]`.
    pub fn fractional_index(&self, depth: f64) -> f64 {
        let w = 1.0 / depth;
        let n = self.depths.len();
        if n == 1 {
            return 0.0;
        }
        let first = 1.0 / self.depths[0];
        if w <= first {
            return 0.0;
        }
        // inverse depths increase with the index
        let i = self.depths.partition_point(|d| 1.0 / d <= w);
        if i >= n {
            return (n - 1) as f64;
        }
        let w0 = 1.0 / self.depths[i - 1];
        let w1 = 1.0 / self.depths[i];
        (i - 1) as f64 + (w - w0) / (w1 - w0)
    }

    /// Index of the plane closest to `depth` in inverse depth.
    pub fn nearest_index(&self, depth: f64) -> usize {
        (self.fractional_index(depth).round() as usize).min(self.depths.len() - 1)
    }
}

/// Per-corner constraint data for one matching view.
struct CornerWarp {
    a: Vector3<f64>,
    b: Vector3<f64>,
}

impl CornerWarp {
    /// Largest inverse-depth step from `w0` keeping the displacement at or
    /// below one pixel; `None` if this corner never moves by a full pixel.
    fn max_step(&self, w0: f64) -> Option<f64> {
        let (a, b) = (&self.a, &self.b);
        let cx = a.z * b.x - b.z * a.x;
        let cy = a.z * b.y - b.z * a.y;
        let c = cx.hypot(cy);
        let d0 = a.z + w0 * b.z;
        if c <= 0.0 || d0 <= 0.0 {
            return None;
        }
        let denom = c - d0 * b.z;
        if denom <= 0.0 {
            return None;
        }
        Some(d0 * d0 / denom)
    }

    /// Pixel position for inverse depth `w`.
    fn pixel(&self, w: f64) -> (f64, f64) {
        let p = self.a + self.b * w;
        (p.x / p.z, p.y / p.z)
    }
}

fn corner_warps(
    k: &CameraIntrinsics,
    reference: &RigidPose,
    matching: &[RigidPose],
) -> Vec<CornerWarp> {
    let km = k.matrix();
    let kinv = k.inverse_matrix();
    let xm = (k.width - 1) as f64;
    let ym = (k.height - 1) as f64;
    let corners = [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)];
    let mut out = Vec::new();
    for m in matching {
        let rel = relative_pose(reference, m);
        let ar = km * rel.rotation() * kinv;
        let b = km * rel.translation();
        for &(u, v) in &corners {
            out.push(CornerWarp {
                a: ar * Vector3::new(u, v, 1.0),
                b,
            });
        }
    }
    out
}

/// Maximum corner displacement, over all matching views, between the
/// plane warps at depths `d0` and `d1`. Exposed for verification.
pub fn max_corner_displacement(
    k: &CameraIntrinsics,
    reference: &RigidPose,
    matching: &[RigidPose],
    d0: f64,
    d1: f64,
) -> f64 {
    corner_warps(k, reference, matching)
        .iter()
        .map(|cw| {
            let (x0, y0) = cw.pixel(1.0 / d0);
            let (x1, y1) = cw.pixel(1.0 / d1);
            (x1 - x0).hypot(y1 - y0)
        })
        .fold(0.0, f64::max)
}

// Keeps the realized displacement at or just below one pixel despite rounding.
const STEP_SHRINK: f64 = 1.0 - 1e-9;

pub fn generate_plane_set(
    k: &CameraIntrinsics,
    reference: &RigidPose,
    matching: &[RigidPose],
    range: &DepthRange,
) -> Result<PlaneSet, MatchError> {
    if matching.is_empty() {
        return Err(MatchError::Config("need at least one matching view".into()));
    }
    let warps = corner_warps(k, reference, matching);
    let w_max = 1.0 / range.d_min;
    let mut w = 1.0 / range.d_max;
    let mut depths = vec![range.d_max];
    loop {
        let step = warps
            .iter()
            .filter_map(|cw| cw.max_step(w))
            .fold(f64::INFINITY, f64::min);
        if !step.is_finite() {
            return Err(MatchError::DegenerateGeometry);
        }
        let next = w + step * STEP_SHRINK;
        if next >= w_max * (1.0 - 1e-9) {
            depths.push(range.d_min);
            break;
        }
        depths.push(1.0 / next);
        w = next;
    }
    PlaneSet::new(depths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap()
    }

    fn tx(x: f64) -> RigidPose {
        RigidPose::from_translation(Vector3::new(x, 0.0, 0.0))
    }

    #[test]
    fn unit_baseline_gives_ten_planes() {
        let range = DepthRange::new(10.0, 100.0).unwrap();
        let p = generate_plane_set(&k100(), &RigidPose::identity(), &[tx(1.0)], &range).unwrap();
        assert_eq!(p.len(), 10);
        // disparity fx·B/d steps by one pixel: 1, 2, ..., 10
        for (i, d) in p.depths().iter().enumerate() {
            assert!((100.0 / d - (i + 1) as f64).abs() < 1e-6, "{i}: {d}");
        }
        let n = p.len();
        for (i, w) in p.depths().windows(2).enumerate() {
            let disp = max_corner_displacement(&k100(), &RigidPose::identity(), &[tx(1.0)], w[0], w[1]);
            // the final plane is clamped onto d_min
            let limit = if i + 2 == n { 1.0 + 1e-6 } else { 1.0 };
            assert!(disp <= limit && disp > 0.5, "{i}: {disp}");
        }
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let range = DepthRange::new(1.0, 10.0).unwrap();
        let r = generate_plane_set(
            &k100(),
            &RigidPose::identity(),
            &[RigidPose::identity(), RigidPose::identity()],
            &range,
        );
        assert_eq!(r, Err(MatchError::DegenerateGeometry));
    }

    #[test]
    fn halving_baseline_halves_count() {
        let range = DepthRange::new(2.0, 50.0).unwrap();
        let full = generate_plane_set(&k100(), &RigidPose::identity(), &[tx(0.8)], &range).unwrap();
        let half = generate_plane_set(&k100(), &RigidPose::identity(), &[tx(0.4)], &range).unwrap();
        let expected = full.len() as f64 / 2.0;
        assert!((half.len() as f64 - expected).abs() <= 1.0, "{} vs {}", half.len(), full.len());
    }

    #[test]
    fn fractional_index_round_trips() {
        let p = PlaneSet::new(vec![100.0, 50.0, 25.0, 10.0]).unwrap();
        assert_eq!(p.fractional_index(100.0), 0.0);
        assert_eq!(p.fractional_index(200.0), 0.0);
        assert!((p.fractional_index(25.0) - 2.0).abs() < 1e-12);
        assert_eq!(p.fractional_index(5.0), 3.0);
        assert!((p.fractional_index(1.0 / 0.015) - 0.5).abs() < 1e-12);
        assert_eq!(p.nearest_index(12.0), 3);
    }

    #[test]
    fn plane_set_validation() {
        assert!(PlaneSet::new(vec![]).is_err());
        assert!(PlaneSet::new(vec![3.0, 3.0]).is_err());
        assert!(PlaneSet::new(vec![3.0, 4.0]).is_err());
        assert!(DepthRange::new(5.0, 1.0).is_err());
        assert!(DepthRange::new(0.0, 1.0).is_err());
    }
}
