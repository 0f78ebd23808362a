//! Dense row-major grid containers used throughout the pipeline.
//!
//! [`Grid2`] holds one value per pixel, [`Grid3`] holds a fixed-length vector
//! per pixel (depth candidates, probability bins, feature channels). Both are
//! plain `Vec`-backed buffers with `(y, x)` indexing, `(0, 0)` at the top-left.

use crate::{Error, Result};

/// H×W grid of per-pixel values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn new(h: usize, w: usize, fill: T) -> Self {
        Self { h, w, data: vec![fill; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "grid2 expects {}x{}={} values, got {}",
                h,
                w,
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        debug_assert!(y < self.h && x < self.w);
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        debug_assert!(y < self.h && x < self.w);
        self.data[y * self.w + x] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape<U: Copy>(&self, other: &Grid2<U>) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid2<U> {
        Grid2 { h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Grid2<f64> {
    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// H×W grid holding an N-vector per pixel, row-major with the N axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    h: usize,
    w: usize,
    n: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid3<T> {
    pub fn new(h: usize, w: usize, n: usize, fill: T) -> Self {
        Self { h, w, n, data: vec![fill; h * w * n] }
    }

    pub fn from_vec(h: usize, w: usize, n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w * n {
            return Err(Error::ShapeMismatch(format!(
                "grid3 expects {}x{}x{}={} values, got {}",
                h,
                w,
                n,
                h * w * n,
                data.len()
            )));
        }
        Ok(Self { h, w, n, data })
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let base = (y * self.w + x) * self.n;
        &self.data[base..base + self.n]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let base = (y * self.w + x) * self.n;
        &mut self.data[base..base + self.n]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, i: usize) -> T {
        debug_assert!(i < self.n);
        self.data[(y * self.w + x) * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, i: usize, v: T) {
        debug_assert!(i < self.n);
        self.data[(y * self.w + x) * self.n + i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Mutable per-row chunks, each covering `w * n` values. Rows are disjoint,
    /// which makes row-parallel writes race-free.
    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, T> {
        self.data.chunks_mut(self.w * self.n)
    }
}

/// Dense H×W×C feature grid with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    values: Vec<f32>,
    valid: Grid2<bool>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        Self::with_mask(height, width, channels, values, Grid2::new(height, width, true))
    }

    pub fn with_mask(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
        valid: Grid2<bool>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("feature map needs at least one channel".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "feature map expects {}x{}x{}={} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                values.len()
            )));
        }
        if valid.h() != height || valid.w() != width {
            return Err(Error::ShapeMismatch("validity mask shape differs from feature map".into()));
        }
        for y in 0..height {
            for x in 0..width {
                if valid.get(y, x) {
                    let base = (y * width + x) * channels;
                    if values[base..base + channels].iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "non-finite feature at valid pixel ({y}, {x})"
                        )));
                    }
                }
            }
        }
        Ok(Self { height, width, channels, values, valid })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
            valid: Grid2::new(height, width, true),
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.values[base..base + self.channels]
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid.get(y, x)
    }

    pub fn valid_mask(&self) -> &Grid2<bool> {
        &self.valid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}
