//! Per-pixel depth, normal and confidence rasters.

use nalgebra::Vector3;

/// Z-depth per pixel. Non-positive values mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        DepthMap {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let d = self.data[y * self.width + x];
        (d > 0.0).then_some(d)
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }

    /// Nearest-neighbor upsampling by two to `width` x `height`.
    pub fn upsample_nearest(&self, width: usize, height: usize) -> DepthMap {
        DepthMap::from_fn(width, height, |x, y| {
            let sx = (x / 2).min(self.width - 1);
            let sy = (y / 2).min(self.height - 1);
            self.data[sy * self.width + sx]
        })
    }
}

/// Unit normals in the camera frame; `None` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Option<Vector3<f64>>>,
}

impl NormalMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        NormalMap {
            width,
            height,
            data: vec![None; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, n: Vector3<f64>) -> Self {
        NormalMap {
            width,
            height,
            data: vec![Some(n); width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        self.data[y * self.width + x]
    }

    pub fn upsample_nearest(&self, width: usize, height: usize) -> NormalMap {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let sx = (x / 2).min(self.width - 1);
                let sy = (y / 2).min(self.height - 1);
                data.push(self.data[sy * self.width + sx]);
            }
        }
        NormalMap {
            width,
            height,
            data,
        }
    }
}

/// Per-pixel confidence in [0, 1]; `None` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Option<f32>>,
}

impl ConfidenceMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        self.data[y * self.width + x]
    }
}
