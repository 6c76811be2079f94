use nalgebra::Vector3;

use crate::geometry::CameraIntrinsics;
use crate::image::{gaussian_kernel, GrayImage};
use crate::maps::{ConfidenceMap, DepthMap, NormalMap};
use crate::matcher::{CostVolume, SENTINEL};

use super::SgmError;

/// Winner-takes-all depth. Ties go to the smallest plane index (farthest
/// plane); pixels holding only sentinel costs are invalid.
pub fn wta_extract(volume: &CostVolume) -> DepthMap {
    let mut out = DepthMap::invalid(volume.width, volume.height);
    for p in 0..volume.width * volume.height {
        let win = volume.window(p);
        let mut best = SENTINEL;
        let mut arg = None;
        for (i, &c) in win.iter().enumerate() {
            if c < best {
                best = c;
                arg = Some(i);
            }
        }
        if let Some(i) = arg {
            out.data[p] = volume.planes.depth(volume.offset(p) + i) as f32;
        }
    }
    out
}

pub const MEDIAN_RADIUS: usize = 2;

/// 5×5 median over valid pixels. The window is clipped at the borders and
/// a pixel stays valid only if more than half of its window is valid
/// (13 of 25 in the interior). Even counts take the lower median.
pub fn median_filter(depth: &DepthMap) -> DepthMap {
    let (w, h) = (depth.width, depth.height);
    let r = MEDIAN_RADIUS;
    let mut out = DepthMap::invalid(w, h);
    let mut buf = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let cells = (y1 - y0 + 1) * (x1 - x0 + 1);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    if let Some(d) = depth.get(xx, yy) {
                        buf.push(d);
                    }
                }
            }
            if 2 * buf.len() > cells {
                buf.sort_by(f32::total_cmp);
                out.data[y * w + x] = buf[(buf.len() - 1) / 2];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl ValidityMask {
    pub fn valid_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v).count() as f64 / self.data.len().max(1) as f64
    }

    /// Invalidates every depth where the mask is false.
    pub fn apply(&self, depth: &mut DepthMap) {
        for (d, &ok) in depth.data.iter_mut().zip(&self.data) {
            if !ok {
                *d = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DogParams {
    pub sigma: f64,
    pub ratio: f64,
    pub threshold: f64,
}

impl Default for DogParams {
    fn default() -> Self {
        DogParams {
            sigma: 1.0,
            ratio: 1.6,
            threshold: 4.0,
        }
    }
}

// Responses this small are rounding noise of a flat region.
const ZERO_RESPONSE: f64 = 1e-9;

/// Difference-of-Gaussians texture mask: a pixel is valid when
/// `|G(σ)∗I − G(ratio·σ)∗I| ≥ threshold` and the response is non-zero.
pub fn dog_mask(image: &GrayImage, sigma: f64, ratio: f64, threshold: f64) -> Result<ValidityMask, SgmError> {
    if !(sigma > 0.0) || !(ratio > 1.0) {
        return Err(SgmError::Params(format!(
            "DoG needs sigma > 0 and ratio > 1, got sigma={sigma} ratio={ratio}"
        )));
    }
    let a = image.convolve_separable(&gaussian_kernel(sigma));
    let b = image.convolve_separable(&gaussian_kernel(sigma * ratio));
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let r = (x as f64 - y as f64).abs();
            r > ZERO_RESPONSE && r >= threshold
        })
        .collect();
    Ok(ValidityMask {
        width: image.width,
        height: image.height,
        data,
    })
}

/// Box mean over the valid pixels of a `(2r+1)²` window, computed in
/// inverse depth. Invalid pixels stay invalid.
pub fn smooth_depth(depth: &DepthMap, radius: usize) -> DepthMap {
    let (w, h) = (depth.width, depth.height);
    let mut out = DepthMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(x, y) {
                continue;
            }
            let (mut sum, mut n) = (0.0f64, 0usize);
            for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    if let Some(d) = depth.get(xx, yy) {
                        sum += 1.0 / d as f64;
                        n += 1;
                    }
                }
            }
            out.data[y * w + x] = (n as f64 / sum) as f32;
        }
    }
    out
}

/// Relative depth jump beyond which a neighbour is not used for normals.
pub const NORMAL_DISCONTINUITY: f64 = 0.05;

/// Normals from central differences of the back-projected depth, oriented
/// towards the camera (negative z). Along an axis where one neighbour is
/// missing or lies across a depth jump of more than
/// [`NORMAL_DISCONTINUITY`], the one-sided difference is used; with
/// neither neighbour usable the normal is invalid.
pub fn normals_from_depth(depth: &DepthMap, k: &CameraIntrinsics) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let mut out = NormalMap::invalid(w, h);
    let point = |x: usize, y: usize| -> Option<Vector3<f64>> {
        depth
            .get(x, y)
            .map(|d| k.backproject(x as f64, y as f64, d as f64))
    };
    for y in 0..h {
        for x in 0..w {
            let Some(c) = point(x, y) else {
                continue;
            };
            let usable = |p: Option<Vector3<f64>>| p.filter(|p| (p.z - c.z).abs() <= NORMAL_DISCONTINUITY * c.z);
            let diff = |back: Option<Vector3<f64>>, fwd: Option<Vector3<f64>>| match (usable(back), usable(fwd)) {
                (Some(b), Some(f)) => Some(f - b),
                (None, Some(f)) => Some(f - c),
                (Some(b), None) => Some(c - b),
                (None, None) => None,
            };
            let left = x.checked_sub(1).and_then(|xl| point(xl, y));
            let right = (x + 1 < w).then(|| point(x + 1, y)).flatten();
            let up = y.checked_sub(1).and_then(|yu| point(x, yu));
            let down = (y + 1 < h).then(|| point(x, y + 1)).flatten();
            let (Some(dx), Some(dy)) = (diff(left, right), diff(up, down)) else {
                continue;
            };
            let n = dx.cross(&dy);
            let norm = n.norm();
            if !(norm > 0.0) || n.z == 0.0 {
                continue;
            }
            let n = n / norm;
            out.data[y * w + x] = Some(if n.z > 0.0 { -n } else { n });
        }
    }
    out
}

/// `1 − best / second_best` of each pixel's cost window.
pub fn confidence_from_volume(volume: &CostVolume) -> ConfidenceMap {
    let n = volume.width * volume.height;
    let mut data = Vec::with_capacity(n);
    for p in 0..n {
        let mut best = SENTINEL;
        let mut second = SENTINEL;
        for &c in volume.window(p) {
            if c < best {
                second = best;
                best = c;
            } else if c < second {
                second = c;
            }
        }
        data.push(if best == SENTINEL {
            None
        } else if second == SENTINEL || second == 0 {
            Some(0.0)
        } else {
            Some((1.0 - best as f64 / second as f64) as f32)
        });
    }
    ConfidenceMap {
        width: volume.width,
        height: volume.height,
        data,
    }
}
