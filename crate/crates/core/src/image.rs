//! RGB and depth buffers.

use crate::{Error, Real, Result};

/// Row-major `H×W×3` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T> {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn filled(height: usize, width: usize, rgb: [T; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.pixels[(row * self.width + col) * 3 + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: T) {
        self.pixels[(row * self.width + col) * 3 + ch] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| crate::scalar::cast(v)).collect(),
        }
    }

    /// Quantizes to 8-bit RGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, data: &[u8]) -> Result<Self> {
        Self::from_pixels(height, width, data.iter().map(|&b| dequantize_u8(b)).collect())
    }
}

#[inline]
pub fn quantize_u8<T: Real>(v: T) -> u8 {
    let x = v.max(T::zero()).min(T::one()).as_f64();
    (x * 255.0).round() as u8
}

#[inline]
pub fn dequantize_u8<T: Real>(b: u8) -> T {
    T::lit(f64::from(b) / 255.0)
}

/// Rendered depth (camera-frame distance weighted by alpha) and accumulated
/// opacity per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuffer<T> {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T: Real> DepthBuffer<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            depth: vec![T::zero(); height * width],
            alpha: vec![T::zero(); height * width],
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pixels covered by the object: accumulated alpha above one half.
    pub fn coverage_mask(&self) -> Vec<bool> {
        self.alpha.iter().map(|&a| a > T::lit(0.5)).collect()
    }

    pub fn cast<U: Real>(&self) -> DepthBuffer<U> {
        DepthBuffer {
            height: self.height,
            width: self.width,
            depth: self.depth.iter().map(|&v| crate::scalar::cast(v)).collect(),
            alpha: self.alpha.iter().map(|&v| crate::scalar::cast(v)).collect(),
        }
    }
}
