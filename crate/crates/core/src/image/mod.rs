//! Two-dimensional scalar images and the grid operators shared by every
//! other module: circular finite differences, the Tikhonov low-pass /
//! high-pass split, and PSNR.

pub(crate) mod io;
mod ops;

pub(crate) use io as io_util;
pub use io::{read_image, read_imgf, read_pgm, write_image, write_imgf, write_pgm};
pub use ops::{
    finite_difference, finite_difference_adjoint, highpass, psnr, psnr_for_csv, tikhonov_lowpass,
    tikhonov_split, PSNR_INF_SENTINEL,
};

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{invalid, Error, Result};

/// Row-major 2-D grid of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, checking the length and that every value is finite.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(invalid(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite value at index {p}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image without validation; used for intermediate results
    /// of arithmetic on already-valid images.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::from_raw(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::from_raw(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Like [`Image::map`] but with a stateful closure, applied in row-major order.
    pub fn map_with(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, a: f64) -> Image {
        self.map(|v| a * v)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Image) -> Image {
        debug_assert_eq!(self.shape(), other.shape());
        Self::from_raw(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x + a * y)
                .collect(),
        )
    }

    /// Circularly shifted copy: output[(i + di) mod H, (j + dj) mod W] = self[i, j].
    pub fn roll(&self, di: isize, dj: isize) -> Image {
        let (h, w) = self.shape();
        let mut out = Image::zeros(h, w);
        for i in 0..h {
            let ti = (i as isize + di).rem_euclid(h as isize) as usize;
            for j in 0..w {
                let tj = (j as isize + dj).rem_euclid(w as isize) as usize;
                out.data[ti * w + tj] = self.data[i * w + j];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.width + j]
    }
}

impl IndexMut<(usize, usize)> for Image {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.width + j]
    }
}

impl Add for &Image {
    type Output = Image;

    fn add(self, rhs: &Image) -> Image {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &Image {
    type Output = Image;

    fn sub(self, rhs: &Image) -> Image {
        debug_assert_eq!(self.shape(), rhs.shape());
        Image::from_raw(
            self.height,
            self.width,
            self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        )
    }
}

impl Mul<f64> for &Image {
    type Output = Image;

    fn mul(self, rhs: f64) -> Image {
        self.scaled(rhs)
    }
}

/// Horizontal and vertical first differences of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub dx: Image,
    pub dy: Image,
}

impl GradientField {
    pub fn new(dx: Image, dy: Image) -> Result<Self> {
        dx.same_shape(&dy)?;
        Ok(Self { dx, dy })
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        self.dx.dot(&other.dx) + self.dy.dot(&other.dy)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}
