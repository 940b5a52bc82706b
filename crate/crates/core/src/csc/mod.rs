//! Convolutional sparse coding.
//!
//! Three denoising formulations share one frequency-domain ADMM solver:
//!
//! * `Csc1`: `½‖y_h − Σ d_m * α_m‖² + λ Σ ‖α_m‖₁` on the high-pass input.
//! * `Csc2`: the same with a per-pixel weighted ℓ1 term `λ Σ ‖w_m ⊙ α_m‖₁`,
//!   where `w_m = 1 / (D_mᵀ y_h)²` is computed from the input.
//! * `Csc3`: joint estimation of a low-pass component `α_{M+1}` with a
//!   `(μ/2)‖G α_{M+1}‖²` penalty, so no pre-filtering is needed.
//!
//! All convolutions are circular; filters are zero-padded to the image size
//! with their origin at pixel `(0, 0)`.

pub(crate) mod admm;
mod conv;
mod denoise;
mod dictionary;

pub use admm::{csc3_objective, csc3_solve, csc_objective, csc_solve, CscSolution};
pub use conv::{correlate, correlate_with, synthesize, synthesize_with, DictSpectra};
pub use denoise::{
    compute_weights, denoise, weighted_shrink, CscDenoiser, CscVariant, WEIGHT_CAP, WEIGHT_EPSILON,
};
pub use dictionary::Dictionary;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

/// Coefficient maps `α_m`, one per filter, plus the joint low-pass
/// component when produced by the `Csc3` solver.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMaps {
    pub maps: Vec<Image>,
    pub lowpass: Option<Image>,
}

impl CoefficientMaps {
    pub fn zeros(count: usize, height: usize, width: usize) -> Self {
        Self {
            maps: vec![Image::zeros(height, width); count],
            lowpass: None,
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.maps.first().map(Image::shape)
    }

    /// `Σ_m ‖α_m‖₁`, optionally weighted.
    pub fn l1_norm(&self, weights: Option<&WeightMaps>) -> f64 {
        match weights {
            None => self
                .maps
                .iter()
                .map(|m| m.data().iter().map(|v| v.abs()).sum::<f64>())
                .sum(),
            Some(w) => self
                .maps
                .iter()
                .zip(&w.weights)
                .map(|(m, w)| {
                    m.data()
                        .iter()
                        .zip(w.data())
                        .map(|(v, w)| (v * w).abs())
                        .sum::<f64>()
                })
                .sum(),
        }
    }

    pub fn nonzeros(&self) -> usize {
        self.maps
            .iter()
            .map(|m| m.data().iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn dot(&self, other: &CoefficientMaps) -> f64 {
        self.maps.iter().zip(&other.maps).map(|(a, b)| a.dot(b)).sum()
    }
}

/// Strictly positive per-pixel ℓ1 weights, one map per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMaps {
    pub weights: Vec<Image>,
}

impl WeightMaps {
    pub fn new(weights: Vec<Image>) -> Result<Self> {
        for (m, w) in weights.iter().enumerate() {
            if w.data().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Invariant(format!(
                    "weight map {m} has non-positive or non-finite entries"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn uniform(count: usize, height: usize, width: usize) -> Self {
        Self {
            weights: vec![Image::filled(height, width, 1.0); count],
        }
    }
}

/// ADMM and model parameters for the sparse coding solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CscParams {
    /// ℓ1 weight.
    pub lambda: f64,
    /// Gradient penalty on the low-pass component (`Csc3` only).
    pub mu: f64,
    /// ADMM penalty; `None` selects `100 λ + 1`.
    pub rho: Option<f64>,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Residual balancing: ρ is doubled/halved every 10 iterations when the
    /// relative primal/dual residual ratio exceeds 10.
    pub adaptive_rho: bool,
}

impl CscParams {
    /// Standalone denoising defaults (200 iterations, tolerance 1e-4).
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            mu: 0.0,
            rho: None,
            max_iter: 200,
            rel_tol: 1e-4,
            adaptive_rho: true,
        }
    }

    /// Defaults for use inside the Plug-and-Play loop (25 iterations).
    pub fn for_pnp(lambda: f64) -> Self {
        Self {
            max_iter: 25,
            ..Self::new(lambda)
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    pub fn with_adaptive_rho(mut self, adaptive: bool) -> Self {
        self.adaptive_rho = adaptive;
        self
    }

    pub fn effective_rho(&self) -> f64 {
        self.rho.unwrap_or(100.0 * self.lambda + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0) {
            return Err(invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        let rho = self.effective_rho();
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(invalid(format!("rho must be positive, got {rho}")));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be >= 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid("rel_tol must be positive"));
        }
        Ok(())
    }
}
