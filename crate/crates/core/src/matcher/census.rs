use crate::image::GrayImage;

use super::MatchError;

/// Largest window whose descriptor fits in 64 bits.
pub const MAX_CENSUS_WINDOW: usize = 7;

/// Census descriptors for every pixel. Bit `i` corresponds to the `i`-th
/// window neighbor in row-major order, center skipped, and is set when that
/// neighbor is darker than the center.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusDescriptorMap {
    pub width: usize,
    pub height: usize,
    pub window: usize,
    pub descriptors: Vec<u64>,
    pub valid: Vec<bool>,
}

impl CensusDescriptorMap {
    pub fn bits(&self) -> usize {
        self.window * self.window - 1
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<u64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.descriptors[i])
    }
}

pub fn check_window(window: usize) -> Result<(), MatchError> {
    if window < 3 || window % 2 == 0 || window > MAX_CENSUS_WINDOW {
        return Err(MatchError::Config(format!(
            "census window must be odd and within 3..={MAX_CENSUS_WINDOW}, got {window}"
        )));
    }
    Ok(())
}

/// Descriptor from a center value and the window values in row-major order
/// (center included, and skipped here).
#[inline]
pub(crate) fn descriptor_from_window(values: &[f32], center_index: usize) -> u64 {
    let c = values[center_index];
    let mut d = 0u64;
    let mut bit = 0;
    for (i, &v) in values.iter().enumerate() {
        if i == center_index {
            continue;
        }
        if v < c {
            d |= 1 << bit;
        }
        bit += 1;
    }
    d
}

pub fn census_transform(image: &GrayImage, window: usize) -> Result<CensusDescriptorMap, MatchError> {
    check_window(window)?;
    if image.width < window || image.height < window {
        return Err(MatchError::Config(format!(
            "image {}x{} smaller than census window {window}",
            image.width, image.height
        )));
    }
    let r = window / 2;
    let (w, h) = (image.width, image.height);
    let mut descriptors = vec![0u64; w * h];
    let mut valid = vec![false; w * h];
    let mut buf = vec![0f32; window * window];
    let center = window * window / 2;
    for y in r..h - r {
        for x in r..w - r {
            let mut k = 0;
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    buf[k] = image.get(xx, yy);
                    k += 1;
                }
            }
            descriptors[y * w + x] = descriptor_from_window(&buf, center);
            valid[y * w + x] = true;
        }
    }
    Ok(CensusDescriptorMap {
        width: w,
        height: h,
        window,
        descriptors,
        valid,
    })
}

#[inline]
pub fn hamming_cost(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_zero_descriptors() {
        let img = GrayImage::from_fn(9, 9, |_, _| 42.0);
        let c = census_transform(&img, 5).unwrap();
        assert_eq!(c.bits(), 24);
        assert!(c.descriptors.iter().all(|&d| d == 0));
    }

    #[test]
    fn three_by_three_patch() {
        let img = GrayImage::from_fn(3, 3, |x, y| (y * 3 + x + 1) as f32);
        let c = census_transform(&img, 3).unwrap();
        // neighbors 1,2,3,4 are darker than the center 5
        assert_eq!(c.get(1, 1), Some(0b1111));
        assert_eq!(c.get(0, 0), None);
    }

    #[test]
    fn border_flags() {
        let img = GrayImage::from_fn(12, 10, |x, y| ((x * 7 + y * 13) % 11) as f32);
        let c = census_transform(&img, 5).unwrap();
        for y in 0..10 {
            for x in 0..12 {
                let interior = (2..10).contains(&x) && (2..8).contains(&y);
                assert_eq!(c.valid[y * 12 + x], interior);
            }
        }
    }

    #[test]
    fn offset_invariance() {
        let img = GrayImage::from_fn(11, 11, |x, y| ((x * 31 + y * 17) % 23) as f32);
        let shifted = GrayImage::from_fn(11, 11, |x, y| img.get(x, y) + 100.0);
        assert_eq!(
            census_transform(&img, 5).unwrap(),
            census_transform(&shifted, 5).unwrap()
        );
    }

    #[test]
    fn window_validation() {
        let img = GrayImage::new(10, 10);
        assert!(census_transform(&img, 4).is_err());
        assert!(census_transform(&img, 1).is_err());
        assert!(census_transform(&img, 9).is_err());
        assert!(census_transform(&GrayImage::new(4, 4), 5).is_err());
    }

    #[test]
    fn hamming_basics() {
        assert_eq!(hamming_cost(0b1011, 0b1011), 0);
        assert_eq!(hamming_cost(0b0000, 0b1111), 4);
    }

    #[test]
    fn hamming_matches_bit_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a: u64 = rng.random::<u64>() & 0xFF_FFFF;
            let b: u64 = rng.random::<u64>() & 0xFF_FFFF;
            let naive = (0..24).filter(|i| ((a >> i) & 1) != ((b >> i) & 1)).count() as u32;
            assert_eq!(hamming_cost(a, b), naive);
        }
    }
}
