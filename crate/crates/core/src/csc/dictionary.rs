use crate::error::{invalid, Error, Result};
use crate::image::Image;

use super::conv::DictSpectra;

/// Ordered set of unit-norm convolutional filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    filters: Vec<Image>,
}

impl Dictionary {
    /// Norm tolerance for dictionaries built in memory.
    pub const NORM_TOL: f64 = 1e-10;

    pub fn new(filters: Vec<Image>) -> Result<Self> {
        Self::with_tolerance(filters, Self::NORM_TOL)
    }

    /// Accepts filters whose ℓ2 norms are within `tol` of one.
    pub fn with_tolerance(filters: Vec<Image>, tol: f64) -> Result<Self> {
        if filters.is_empty() {
            return Err(invalid("dictionary needs at least one filter"));
        }
        for (m, f) in filters.iter().enumerate() {
            let n = f.norm();
            if (n - 1.0).abs() > tol {
                return Err(Error::Invariant(format!(
                    "filter {m} has norm {n}, expected 1 within {tol}"
                )));
            }
        }
        Ok(Self { filters })
    }

    /// Scales every filter to unit norm; all-zero filters are rejected.
    pub fn normalized(filters: Vec<Image>) -> Result<Self> {
        let filters = filters
            .into_iter()
            .enumerate()
            .map(|(m, f)| {
                let n = f.norm();
                if n == 0.0 {
                    Err(Error::Invariant(format!("filter {m} is all zero")))
                } else {
                    Ok(f.scaled(1.0 / n))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(filters)
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn filters(&self) -> &[Image] {
        &self.filters
    }

    pub fn filter(&self, m: usize) -> &Image {
        &self.filters[m]
    }

    /// Largest filter extent `(height, width)`.
    pub fn max_filter_shape(&self) -> (usize, usize) {
        self.filters.iter().fold((0, 0), |(h, w), f| {
            (h.max(f.height()), w.max(f.width()))
        })
    }

    /// First `count` filters.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        Self::new(self.filters[..count.min(self.len())].to_vec())
    }

    /// Filter spectra at image size `height x width`.
    pub fn spectra(&self, height: usize, width: usize) -> Result<DictSpectra> {
        DictSpectra::new(self, height, width)
    }
}
