//! Dense RGB and single-channel buffers.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major H×W×3 image, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T> {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, `3 * (y * width + x) + channel`.
    pub rgb: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer { width, height, rgb: vec![T::zero(); width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, color: [T; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&color);
        }
        ImageBuffer { width, height, rgb }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.extend_from_slice(&f(x, y));
            }
        }
        ImageBuffer { width, height, rgb }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: [T; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    pub fn same_shape<U>(&self, other: &ImageBuffer<U>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        ImageBuffer { width: self.width, height: self.height, rgb: self.rgb.iter().map(|v| U::c(v.to_f())).collect() }
    }

    pub fn clamped(&self) -> Self {
        ImageBuffer {
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|v| v.max(T::zero()).min(T::one())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rgb.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.rgb.iter().zip(&other.rgb).map(|(a, b)| (a.to_f() - b.to_f()).abs()).fold(0.0, f64::max)
    }
}

/// Row-major single-channel map (depth, accumulated alpha).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> ScalarMap<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        ScalarMap { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }
}

pub type DepthMap<T> = ScalarMap<T>;
