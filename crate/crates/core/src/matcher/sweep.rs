//! Plane-sweep cost volumes.
//!
//! Every matching image is warped into the reference view through each
//! sweep plane (bilinear sampling), census-transformed on the warped
//! intensities and compared with the reference descriptor. The per-pixel
//! cost of a plane is `round(4 · Σ hamming / n_valid)` over the views whose
//! warp of the pixel center lands inside the image.

use nalgebra::Matrix3;

use crate::geometry::{
    apply_homography, plane_homography, relative_pose, CameraIntrinsics, RigidPose,
};
use crate::image::GrayImage;
use crate::maps::DepthMap;
use crate::sampler::ImageBundle;

use super::census::{census_transform, check_window, descriptor_from_window, hamming_cost, CensusDescriptorMap};
use super::planes::PlaneSet;
use super::MatchError;

/// Cost marking a pixel/plane pair without any valid match.
pub const SENTINEL: u32 = u32::MAX;

/// Costs per pixel over a contiguous window of plane indices.
///
/// A full volume stores every plane for every pixel; a dynamic volume
/// stores `counts[i]` planes starting at `offsets[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub planes: PlaneSet,
    offsets: Vec<u32>,
    counts: Vec<u32>,
    starts: Vec<usize>,
    costs: Vec<u32>,
    /// Value standing in for [`SENTINEL`] during aggregation.
    pub max_cost: u32,
}

impl CostVolume {
    /// Builds a volume from per-pixel windows. `costs` holds the windows
    /// back to back in row-major pixel order.
    pub fn from_windows(
        width: usize,
        height: usize,
        planes: PlaneSet,
        offsets: Vec<u32>,
        counts: Vec<u32>,
        costs: Vec<u32>,
        max_cost: u32,
    ) -> Result<Self, MatchError> {
        let n = width * height;
        if offsets.len() != n || counts.len() != n {
            return Err(MatchError::Config("window arrays do not match image size".into()));
        }
        let mut starts = Vec::with_capacity(n);
        let mut acc = 0usize;
        for (o, c) in offsets.iter().zip(&counts) {
            if *c == 0 || (*o + *c) as usize > planes.len() {
                return Err(MatchError::Config("plane window out of range".into()));
            }
            starts.push(acc);
            acc += *c as usize;
        }
        if costs.len() != acc {
            return Err(MatchError::Config(format!(
                "expected {acc} costs, got {}",
                costs.len()
            )));
        }
        Ok(CostVolume {
            width,
            height,
            planes,
            offsets,
            counts,
            starts,
            costs,
            max_cost,
        })
    }

    /// Full volume from dense costs laid out `[pixel][plane]`.
    pub fn from_dense(width: usize, height: usize, planes: PlaneSet, costs: Vec<u32>) -> Result<Self, MatchError> {
        let n = planes.len() as u32;
        let max_cost = costs.iter().copied().filter(|&c| c != SENTINEL).max().unwrap_or(0);
        CostVolume::from_windows(
            width,
            height,
            planes,
            vec![0; width * height],
            vec![n; width * height],
            costs,
            max_cost,
        )
    }

    pub fn is_full(&self) -> bool {
        let n = self.planes.len() as u32;
        self.offsets.iter().all(|&o| o == 0) && self.counts.iter().all(|&c| c == n)
    }

    #[inline]
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn offset(&self, pixel: usize) -> usize {
        self.offsets[pixel] as usize
    }

    #[inline]
    pub fn count(&self, pixel: usize) -> usize {
        self.counts[pixel] as usize
    }

    #[inline]
    pub fn window(&self, pixel: usize) -> &[u32] {
        let s = self.starts[pixel];
        &self.costs[s..s + self.counts[pixel] as usize]
    }

    #[inline]
    pub fn window_mut(&mut self, pixel: usize) -> &mut [u32] {
        let s = self.starts[pixel];
        let c = self.counts[pixel] as usize;
        &mut self.costs[s..s + c]
    }

    /// Cost of global plane index `plane` at pixel `(x, y)`, if stored.
    pub fn cost(&self, x: usize, y: usize, plane: usize) -> Option<u32> {
        let p = self.pixel_index(x, y);
        let o = self.offset(p);
        (plane >= o && plane < o + self.count(p)).then(|| self.window(p)[plane - o])
    }

    pub fn costs(&self) -> &[u32] {
        &self.costs
    }

    /// Same windows, new costs.
    pub fn with_costs(&self, costs: Vec<u32>, max_cost: u32) -> CostVolume {
        assert_eq!(costs.len(), self.costs.len());
        CostVolume {
            costs,
            max_cost,
            ..self.clone()
        }
    }

    /// True if every stored cost of the pixel is the sentinel.
    pub fn is_sentinel_only(&self, pixel: usize) -> bool {
        self.window(pixel).iter().all(|&c| c == SENTINEL)
    }
}

/// One matching view at the working resolution.
#[derive(Debug, Clone)]
pub struct MatchingView {
    pub image: GrayImage,
    /// Reference camera frame to matching camera frame.
    pub relative: RigidPose,
}

/// Everything the sweep needs at one resolution.
#[derive(Debug, Clone)]
pub struct SweepInput {
    pub intrinsics: CameraIntrinsics,
    pub reference: GrayImage,
    pub views: Vec<MatchingView>,
}

impl SweepInput {
    /// Full-resolution sweep input from a bundle (grayscale by integer luma).
    pub fn from_bundle(bundle: &ImageBundle) -> SweepInput {
        let reference = bundle.reference();
        SweepInput {
            intrinsics: bundle.intrinsics,
            reference: reference.image.to_gray(),
            views: bundle
                .matching()
                .map(|f| MatchingView {
                    image: f.image.to_gray(),
                    relative: relative_pose(&reference.pose, &f.pose),
                })
                .collect(),
        }
    }
}

#[inline]
fn warp_sample(src: &GrayImage, h: &Matrix3<f64>, x: usize, y: usize) -> f32 {
    match apply_homography(h, x as f64, y as f64) {
        Some(p) => src.sample(p.x, p.y),
        None => f32::NAN,
    }
}

#[inline]
fn center_valid(k: &CameraIntrinsics, h: &Matrix3<f64>, x: usize, y: usize) -> bool {
    apply_homography(h, x as f64, y as f64).is_some_and(|p| k.contains(&p))
}

#[inline]
fn normalize_cost(sum: u32, valid: u32) -> u32 {
    if valid == 0 {
        SENTINEL
    } else {
        (4 * sum + valid / 2) / valid
    }
}

struct Prepared<'a> {
    input: &'a SweepInput,
    census: CensusDescriptorMap,
    window: usize,
    /// `[plane][view]` homographies.
    homographies: Vec<Vec<Matrix3<f64>>>,
}

impl<'a> Prepared<'a> {
    fn new(input: &'a SweepInput, planes: &PlaneSet, window: usize) -> Result<Self, MatchError> {
        check_window(window)?;
        let census = census_transform(&input.reference, window)?;
        let mut homographies = Vec::with_capacity(planes.len());
        for &d in planes.depths() {
            let mut hs = Vec::with_capacity(input.views.len());
            for v in &input.views {
                hs.push(plane_homography(&input.intrinsics, &v.relative, d)?);
            }
            homographies.push(hs);
        }
        Ok(Prepared {
            input,
            census,
            window,
            homographies,
        })
    }

    fn max_cost(&self) -> u32 {
        4 * (self.window * self.window - 1) as u32
    }

    /// Cost of one pixel and plane, warping the neighborhood on the fly.
    fn pixel_cost(&self, x: usize, y: usize, plane: usize, buf: &mut [f32]) -> u32 {
        let Some(ref_desc) = self.census.get(x, y) else {
            return SENTINEL;
        };
        let r = self.window / 2;
        let center = self.window * self.window / 2;
        let (mut sum, mut valid) = (0u32, 0u32);
        for (view, h) in self.input.views.iter().zip(&self.homographies[plane]) {
            if !center_valid(&self.input.intrinsics, h, x, y) {
                continue;
            }
            let mut k = 0;
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    buf[k] = warp_sample(&view.image, h, xx, yy);
                    k += 1;
                }
            }
            sum += hamming_cost(descriptor_from_window(buf, center), ref_desc);
            valid += 1;
        }
        normalize_cost(sum, valid)
    }
}

/// Full cost volume over every plane.
pub fn sweep_cost_volume(input: &SweepInput, planes: &PlaneSet, census_window: usize) -> Result<CostVolume, MatchError> {
    let prep = Prepared::new(input, planes, census_window)?;
    let (w, h) = (input.reference.width, input.reference.height);
    let n = planes.len();
    let r = census_window / 2;
    let center = census_window * census_window / 2;
    let mut costs = vec![SENTINEL; w * h * n];
    let mut warped = GrayImage::new(w, h);
    let mut inside = vec![false; w * h];
    let mut sums = vec![0u32; w * h];
    let mut valid = vec![0u32; w * h];
    let mut buf = vec![0f32; census_window * census_window];
    for plane in 0..n {
        sums.iter_mut().for_each(|s| *s = 0);
        valid.iter_mut().for_each(|s| *s = 0);
        for (view, hm) in input.views.iter().zip(&prep.homographies[plane]) {
            for y in 0..h {
                for x in 0..w {
                    warped.data[y * w + x] = warp_sample(&view.image, hm, x, y);
                    inside[y * w + x] = center_valid(&input.intrinsics, hm, x, y);
                }
            }
            for y in r..h - r {
                for x in r..w - r {
                    let i = y * w + x;
                    if !inside[i] || !prep.census.valid[i] {
                        continue;
                    }
                    let mut k = 0;
                    for yy in y - r..=y + r {
                        let row = &warped.data[yy * w + x - r..=yy * w + x + r];
                        buf[k..k + census_window].copy_from_slice(row);
                        k += census_window;
                    }
                    let d = descriptor_from_window(&buf, center);
                    sums[i] += hamming_cost(d, prep.census.descriptors[i]);
                    valid[i] += 1;
                }
            }
        }
        for i in 0..w * h {
            if prep.census.valid[i] {
                costs[i * n + plane] = normalize_cost(sums[i], valid[i]);
            }
        }
    }
    CostVolume::from_windows(
        w,
        h,
        planes.clone(),
        vec![0; w * h],
        vec![n as u32; w * h],
        costs,
        prep.max_cost(),
    )
}

/// Dynamic cost volume: each pixel only evaluates the planes within
/// `half_width` of its prior's nearest plane. Pixels without a valid prior
/// fall back to the full range.
pub fn local_sweep(
    input: &SweepInput,
    prior_depth: &DepthMap,
    half_width: usize,
    planes: &PlaneSet,
    census_window: usize,
) -> Result<CostVolume, MatchError> {
    if half_width == 0 {
        return Err(MatchError::Config("half_width must be at least 1".into()));
    }
    let (w, h) = (input.reference.width, input.reference.height);
    if prior_depth.width != w || prior_depth.height != h {
        return Err(MatchError::Config(format!(
            "prior is {}x{}, expected {w}x{h}",
            prior_depth.width, prior_depth.height
        )));
    }
    let prep = Prepared::new(input, planes, census_window)?;
    let n = planes.len();
    let mut offsets = Vec::with_capacity(w * h);
    let mut counts = Vec::with_capacity(w * h);
    let mut costs = Vec::new();
    let mut buf = vec![0f32; census_window * census_window];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = match prior_depth.get(x, y) {
                Some(d) => {
                    let j = planes.nearest_index(d as f64);
                    (j.saturating_sub(half_width), (j + half_width).min(n - 1))
                }
                None => (0, n - 1),
            };
            offsets.push(lo as u32);
            counts.push((hi - lo + 1) as u32);
            for plane in lo..=hi {
                costs.push(prep.pixel_cost(x, y, plane, &mut buf));
            }
        }
    }
    CostVolume::from_windows(w, h, planes.clone(), offsets, counts, costs, prep.max_cost())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let v = (x as u64 * 7919 + y as u64 * 104729 + seed * 31337) % 251;
            v as f32
        })
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap()
    }

    #[test]
    fn identical_views_cost_zero() {
        let img = textured(32, 24, 1);
        let input = SweepInput {
            intrinsics: k(),
            reference: img.clone(),
            views: (0..4)
                .map(|_| MatchingView {
                    image: img.clone(),
                    relative: RigidPose::identity(),
                })
                .collect(),
        };
        let planes = PlaneSet::new(vec![10.0, 5.0, 2.0]).unwrap();
        let vol = sweep_cost_volume(&input, &planes, 5).unwrap();
        assert!(vol.is_full());
        for y in 2..22 {
            for x in 2..30 {
                for p in 0..3 {
                    assert_eq!(vol.cost(x, y, p), Some(0));
                }
            }
        }
        assert!(vol.is_sentinel_only(vol.pixel_index(0, 0)));
    }

    fn shifted_input() -> (SweepInput, PlaneSet) {
        let img = textured(32, 24, 2);
        let rel = relative_pose(
            &RigidPose::identity(),
            &RigidPose::from_translation(Vector3::new(0.2, 0.0, 0.0)),
        );
        let other = textured(32, 24, 5);
        let input = SweepInput {
            intrinsics: k(),
            reference: img,
            views: vec![
                MatchingView {
                    image: other.clone(),
                    relative: rel,
                },
                MatchingView {
                    image: other,
                    relative: rel.inverse(),
                },
            ],
        };
        let planes = PlaneSet::new(vec![20.0, 10.0, 6.0, 4.0, 3.0, 2.5, 2.0]).unwrap();
        (input, planes)
    }

    #[test]
    fn local_sweep_matches_full_slice() {
        let (input, planes) = shifted_input();
        let full = sweep_cost_volume(&input, &planes, 5).unwrap();
        let prior = DepthMap::from_fn(32, 24, |x, y| match (x + y) % 4 {
            0 => 0.0,
            1 => 20.0,
            2 => 4.1,
            _ => 2.0,
        });
        let local = local_sweep(&input, &prior, 2, &planes, 5).unwrap();
        assert!(!local.is_full());
        for y in 0..24 {
            for x in 0..32 {
                let p = local.pixel_index(x, y);
                for plane in local.offset(p)..local.offset(p) + local.count(p) {
                    assert_eq!(local.cost(x, y, plane), full.cost(x, y, plane));
                }
            }
        }
        // prior on plane 3 with half width 2 covers 1..=5
        let p = local.pixel_index(1, 1);
        assert_eq!((local.offset(p), local.count(p)), (1, 5));
        // invalid prior covers everything
        let p = local.pixel_index(0, 0);
        assert_eq!((local.offset(p), local.count(p)), (0, 7));
    }

    #[test]
    fn invalid_prior_equals_full_sweep() {
        let (input, planes) = shifted_input();
        let full = sweep_cost_volume(&input, &planes, 5).unwrap();
        let local = local_sweep(&input, &DepthMap::invalid(32, 24), 3, &planes, 5).unwrap();
        assert_eq!(full, local);
    }

    #[test]
    fn normalization_rounds() {
        assert_eq!(normalize_cost(5, 4), 5);
        assert_eq!(normalize_cost(5, 3), 7);
        assert_eq!(normalize_cost(0, 0), SENTINEL);
    }

    #[test]
    fn rejects_bad_config() {
        let (input, planes) = shifted_input();
        assert!(sweep_cost_volume(&input, &planes, 4).is_err());
        assert!(local_sweep(&input, &DepthMap::invalid(32, 24), 0, &planes, 5).is_err());
        assert!(local_sweep(&input, &DepthMap::invalid(16, 24), 1, &planes, 5).is_err());
    }
}
