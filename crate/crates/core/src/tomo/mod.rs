//! Parallel-beam tomography.
//!
//! Pixel `(i, j)` of an `N x N` image has its center at
//! `(x, y) = (j − c, c − i)` with `c = (N − 1) / 2`. A view at angle `θ`
//! measures line integrals along `x cos θ + y sin θ = s`; detector `t` sits
//! at `s_t = (t − (D − 1) / 2) · spacing`.

mod io;
mod projector;
mod solve;

pub use io::{load_sinogram, read_sinogram, save_sinogram, write_sinogram};
pub use projector::{backproject, fbp, project, Projector};
pub use solve::{mrf_cost, mrf_reconstruct, solve_f, MrfOutcome, MrfParams};

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

/// Acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Parallel {
        /// View angles in radians, each in `[0, π)`.
        angles: Vec<f64>,
        num_detectors: usize,
        detector_spacing: f64,
        image_side: usize,
    },
    /// `A = I` on a `side x side` grid; the sinogram is the image itself.
    Identity { side: usize },
}

impl Geometry {
    /// Parallel beam with `ceil(√2 · side)` unit-spaced detectors.
    pub fn parallel(angles: Vec<f64>, image_side: usize) -> Result<Self> {
        let detectors = (std::f64::consts::SQRT_2 * image_side as f64).ceil() as usize;
        Self::parallel_with(angles, detectors, 1.0, image_side)
    }

    pub fn parallel_with(
        angles: Vec<f64>,
        num_detectors: usize,
        detector_spacing: f64,
        image_side: usize,
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(invalid("geometry needs at least one view"));
        }
        if let Some(a) = angles.iter().find(|a| !(0.0..PI).contains(*a)) {
            return Err(invalid(format!("view angle {a} outside [0, pi)")));
        }
        if image_side == 0 || num_detectors == 0 {
            return Err(invalid("image side and detector count must be positive"));
        }
        if !(detector_spacing > 0.0) || !detector_spacing.is_finite() {
            return Err(invalid(format!("detector spacing must be positive, got {detector_spacing}")));
        }
        Ok(Self::Parallel {
            angles,
            num_detectors,
            detector_spacing,
            image_side,
        })
    }

    /// `views` equally spaced angles `k π / views`.
    pub fn equally_spaced(views: usize, image_side: usize) -> Result<Self> {
        Self::parallel(
            (0..views).map(|k| k as f64 * PI / views as f64).collect(),
            image_side,
        )
    }

    /// `views` equally spaced angles from `lo_deg` to `hi_deg` inclusive.
    pub fn limited_angle(views: usize, lo_deg: f64, hi_deg: f64, image_side: usize) -> Result<Self> {
        if views < 2 {
            return Err(invalid("limited-angle geometry needs at least two views"));
        }
        let step = (hi_deg - lo_deg) / (views - 1) as f64;
        Self::parallel(
            (0..views)
                .map(|k| (lo_deg + k as f64 * step).to_radians())
                .collect(),
            image_side,
        )
    }

    pub fn identity(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(invalid("image side must be positive"));
        }
        Ok(Self::Identity { side })
    }

    pub fn image_side(&self) -> usize {
        match self {
            Geometry::Parallel { image_side, .. } => *image_side,
            Geometry::Identity { side } => *side,
        }
    }

    pub fn num_views(&self) -> usize {
        match self {
            Geometry::Parallel { angles, .. } => angles.len(),
            Geometry::Identity { side } => *side,
        }
    }

    pub fn num_detectors(&self) -> usize {
        match self {
            Geometry::Parallel { num_detectors, .. } => *num_detectors,
            Geometry::Identity { side } => *side,
        }
    }

    pub fn detector_spacing(&self) -> f64 {
        match self {
            Geometry::Parallel {
                detector_spacing, ..
            } => *detector_spacing,
            Geometry::Identity { .. } => 1.0,
        }
    }

    pub fn angles(&self) -> &[f64] {
        match self {
            Geometry::Parallel { angles, .. } => angles,
            Geometry::Identity { .. } => &[],
        }
    }

    /// `(views, detectors)`
    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.num_views(), self.num_detectors())
    }

    /// Whether the detector row spans the image diagonal.
    pub fn covers_image(&self) -> bool {
        match self {
            Geometry::Parallel {
                num_detectors,
                detector_spacing,
                image_side,
                ..
            } => *num_detectors as f64 * detector_spacing >= std::f64::consts::SQRT_2 * *image_side as f64 - 1e-9,
            Geometry::Identity { .. } => true,
        }
    }
}

/// Projection data: one row per view, one column per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    values: Image,
    geometry: Geometry,
}

impl Sinogram {
    pub fn new(values: Image, geometry: Geometry) -> Result<Self> {
        if values.shape() != geometry.sinogram_shape() {
            return Err(Error::ShapeMismatch {
                expected: geometry.sinogram_shape(),
                actual: values.shape(),
            });
        }
        Ok(Self { values, geometry })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let (v, d) = geometry.sinogram_shape();
        Self {
            values: Image::zeros(v, d),
            geometry,
        }
    }

    pub fn values(&self) -> &Image {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Image {
        &mut self.values
    }

    pub fn into_values(self) -> Image {
        self.values
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    pub fn view(&self, v: usize) -> &[f64] {
        let d = self.geometry.num_detectors();
        &self.values.data()[v * d..(v + 1) * d]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.values.dot(&other.values)
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Image) -> Result<Self> {
        Self::new(values, self.geometry.clone())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.scaled(a),
            geometry: self.geometry.clone(),
        }
    }
}

/// Diagonal measurement weights `W` (inverse noise variances).
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseWeights {
    Identity,
    Diagonal(Image),
}

impl NoiseWeights {
    pub fn diagonal(weights: Image) -> Result<Self> {
        if let Some(w) = weights.data().iter().find(|w| !(**w > 0.0)) {
            return Err(invalid(format!("noise weights must be positive, got {w}")));
        }
        Ok(Self::Diagonal(weights))
    }

    pub fn max(&self) -> f64 {
        match self {
            NoiseWeights::Identity => 1.0,
            NoiseWeights::Diagonal(w) => w.max(),
        }
    }

    pub(crate) fn check(&self, shape: (usize, usize)) -> Result<()> {
        match self {
            NoiseWeights::Diagonal(w) if w.shape() != shape => Err(Error::ShapeMismatch {
                expected: shape,
                actual: w.shape(),
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn apply(&self, r: &mut [f64]) {
        if let NoiseWeights::Diagonal(w) = self {
            for (v, w) in r.iter_mut().zip(w.data()) {
                *v *= w;
            }
        }
    }

    /// `rᵀ W r`
    pub(crate) fn quad(&self, r: &[f64]) -> f64 {
        match self {
            NoiseWeights::Identity => r.iter().map(|v| v * v).sum(),
            NoiseWeights::Diagonal(w) => r.iter().zip(w.data()).map(|(v, w)| w * v * v).sum(),
        }
    }
}
