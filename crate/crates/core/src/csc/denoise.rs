use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Result};
use crate::image::{tikhonov_split, Image};

use super::admm::{csc3_solve_with, csc_solve_with};
use super::conv::{correlate_with, synthesize_with, DictSpectra};
use super::{CoefficientMaps, CscParams, Dictionary, WeightMaps};

/// Floor applied to the squared correlation before inversion.
pub const WEIGHT_EPSILON: f64 = 1e-8;
/// Upper clamp on the ℓ1 weights.
pub const WEIGHT_CAP: f64 = 1e8;

pub(crate) fn shrink_in_place(v: &mut [f64], threshold: f64, weights: Option<&[f64]>) {
    match weights {
        None => {
            for x in v.iter_mut() {
                *x = x.signum() * (x.abs() - threshold).max(0.0);
            }
        }
        Some(w) => {
            for (x, w) in v.iter_mut().zip(w) {
                *x = x.signum() * (x.abs() - threshold * w).max(0.0);
            }
        }
    }
}

/// Proximal map of `threshold · Σ ‖w_m ⊙ α_m‖₁`.
pub fn weighted_shrink(
    v: &CoefficientMaps,
    threshold: f64,
    weights: Option<&WeightMaps>,
) -> Result<CoefficientMaps> {
    if !(threshold > 0.0) {
        return Err(invalid(format!("threshold must be positive, got {threshold}")));
    }
    if let Some(w) = weights {
        if w.weights.len() != v.len() {
            return Err(invalid("weight/map count mismatch"));
        }
    }
    let maps = v
        .maps
        .iter()
        .enumerate()
        .map(|(m, map)| {
            let mut out = map.clone();
            let wm = match weights {
                Some(w) => {
                    map.same_shape(&w.weights[m])?;
                    Some(w.weights[m].data())
                }
                None => None,
            };
            shrink_in_place(out.data_mut(), threshold, wm);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoefficientMaps {
        maps,
        lowpass: v.lowpass.clone(),
    })
}

/// `w_m = min(1 / max((D_mᵀ y_h)², ε), cap)`.
pub fn compute_weights(
    dict: &Dictionary,
    y_h: &Image,
    epsilon: f64,
    w_cap: f64,
) -> Result<WeightMaps> {
    let spectra = dict.spectra(y_h.height(), y_h.width())?;
    compute_weights_with(&spectra, y_h, epsilon, w_cap)
}

pub(crate) fn compute_weights_with(
    spectra: &DictSpectra,
    y_h: &Image,
    epsilon: f64,
    w_cap: f64,
) -> Result<WeightMaps> {
    if !(epsilon > 0.0) || !(w_cap > 0.0) {
        return Err(invalid("weight epsilon and cap must be positive"));
    }
    let corr = correlate_with(spectra, y_h)?;
    Ok(WeightMaps {
        weights: corr
            .maps
            .into_iter()
            .map(|c| c.map(|v| (1.0 / (v * v).max(epsilon)).min(w_cap)))
            .collect(),
    })
}

/// Which sparse coding formulation a denoiser uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CscVariant {
    /// Plain ℓ1 on the high-pass component.
    Csc1,
    /// Correlation-weighted ℓ1 on the high-pass component.
    Csc2,
    /// Joint low-pass estimation with a gradient penalty.
    Csc3,
}

impl CscVariant {
    pub const ALL: [CscVariant; 3] = [CscVariant::Csc1, CscVariant::Csc2, CscVariant::Csc3];

    pub fn name(self) -> &'static str {
        match self {
            CscVariant::Csc1 => "csc1",
            CscVariant::Csc2 => "csc2",
            CscVariant::Csc3 => "csc3",
        }
    }
}

impl fmt::Display for CscVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CscVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csc1" | "csc-i" => Ok(CscVariant::Csc1),
            "csc2" | "csc-ii" => Ok(CscVariant::Csc2),
            "csc3" | "csc-iii" => Ok(CscVariant::Csc3),
            other => Err(invalid(format!("unknown CSC variant '{other}'"))),
        }
    }
}

/// Convolutional sparse coding denoiser with cached filter spectra.
#[derive(Debug, Clone)]
pub struct CscDenoiser {
    spectra: DictSpectra,
    pub params: CscParams,
    pub variant: CscVariant,
    pub lambda_lpf: f64,
}

impl CscDenoiser {
    pub fn new(
        dict: &Dictionary,
        shape: (usize, usize),
        params: CscParams,
        variant: CscVariant,
        lambda_lpf: f64,
    ) -> Result<Self> {
        params.validate()?;
        if variant == CscVariant::Csc3 && !(params.mu > 0.0) {
            return Err(invalid("the joint low-pass variant needs mu > 0"));
        }
        if !(lambda_lpf >= 0.0) {
            return Err(invalid("lambda_lpf must be >= 0"));
        }
        Ok(Self {
            spectra: dict.spectra(shape.0, shape.1)?,
            params,
            variant,
            lambda_lpf,
        })
    }

    pub fn denoise(&self, noisy: &Image) -> Result<Image> {
        match self.variant {
            CscVariant::Csc1 | CscVariant::Csc2 => {
                let (low, high) = tikhonov_split(noisy, self.lambda_lpf)?;
                let weights = if self.variant == CscVariant::Csc2 {
                    Some(compute_weights_with(
                        &self.spectra,
                        &high,
                        WEIGHT_EPSILON,
                        WEIGHT_CAP,
                    )?)
                } else {
                    None
                };
                let sol = csc_solve_with(&self.spectra, &high, &self.params, weights.as_ref())?;
                let mut out = synthesize_with(&self.spectra, &sol.maps)?;
                for (o, l) in out.data_mut().iter_mut().zip(low.data()) {
                    *o += l;
                }
                Ok(out)
            }
            CscVariant::Csc3 => {
                let sol = csc3_solve_with(&self.spectra, noisy, &self.params)?;
                synthesize_with(&self.spectra, &sol.maps)
            }
        }
    }
}

/// One-shot denoising of `y_n` with the chosen variant.
pub fn denoise(
    y_n: &Image,
    dict: &Dictionary,
    params: &CscParams,
    variant: CscVariant,
    lambda_lpf: f64,
) -> Result<Image> {
    CscDenoiser::new(dict, y_n.shape(), *params, variant, lambda_lpf)?.denoise(y_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shrink_examples() {
        let v = CoefficientMaps {
            maps: vec![Image::new(1, 1, vec![2.0]).unwrap()],
            lowpass: None,
        };
        let out = weighted_shrink(&v, 0.5, None).unwrap();
        assert_eq!(out.maps[0].data(), &[1.5]);
        let w = WeightMaps::new(vec![Image::filled(1, 1, 4.0)]).unwrap();
        let out = weighted_shrink(&v, 0.5, Some(&w)).unwrap();
        assert_eq!(out.maps[0].data(), &[0.0]);
        let small = CoefficientMaps {
            maps: vec![Image::new(1, 3, vec![0.1, -0.4, 0.5]).unwrap()],
            lowpass: None,
        };
        assert_eq!(weighted_shrink(&small, 0.5, None).unwrap().nonzeros(), 0);
        assert!(weighted_shrink(&v, 0.0, None).is_err());
    }

    #[test]
    fn shrink_is_the_proximal_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid: Vec<f64> = (0..=40000).map(|k| -10.0 + k as f64 * 5e-4).collect();
        for _ in 0..1000 {
            let v = rng.random_range(-8.0..8.0);
            let t = rng.random_range(0.01..2.0);
            let w = rng.random_range(0.1..3.0);
            let mut x = [v];
            shrink_in_place(&mut x, t, Some(&[w]));
            let best = grid
                .iter()
                .copied()
                .min_by(|a, b| {
                    let fa = 0.5 * (a - v).powi(2) + t * w * a.abs();
                    let fb = 0.5 * (b - v).powi(2) + t * w * b.abs();
                    fa.partial_cmp(&fb).unwrap()
                })
                .unwrap();
            assert!((x[0] - best).abs() <= 5e-4, "v={v} t={t} w={w}: {} vs {best}", x[0]);
        }
    }

    fn one_filter_dict(corr_scale: f64) -> (Dictionary, Image) {
        let dict = Dictionary::new(vec![Image::filled(1, 1, 1.0)]).unwrap();
        let img = Image::new(1, 3, vec![1.0, 0.0, 0.5 * corr_scale]).unwrap();
        (dict, img)
    }

    #[test]
    fn weight_rule() {
        // 1x1 unit filter: correlation is the image itself
        let (dict, img) = one_filter_dict(1.0);
        let w = compute_weights(&dict, &img, 1e-8, 1e8).unwrap();
        let d = w.weights[0].data();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((d[1] - 1e8).abs() < 1e-3);
        assert!((d[2] - 4.0).abs() < 1e-12);
        assert!(w.weights[0].data().iter().all(|v| *v > 0.0 && *v <= 1e8));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in CscVariant::ALL {
            assert_eq!(v.name().parse::<CscVariant>().unwrap(), v);
        }
        assert!("csc4".parse::<CscVariant>().is_err());
    }

    fn small_dict(rng: &mut ChaCha8Rng) -> Dictionary {
        Dictionary::normalized(
            [2, 3, 4]
                .iter()
                .map(|&s| Image::from_fn(s, s, |_, _| rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_image_passes_through_every_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dict = small_dict(&mut rng);
        let img = Image::filled(16, 16, 0.4);
        for v in CscVariant::ALL {
            let params = CscParams::new(0.05).with_mu(1.0);
            let out = denoise(&img, &dict, &params, v, 7.0).unwrap();
            assert!((&out - &img).norm() <= 1e-3 * img.norm(), "{v}");
        }
    }

    #[test]
    fn impulse_complete_dictionary_reproduces_input_at_tiny_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut filters = vec![Image::filled(1, 1, 1.0)];
        filters.extend(small_dict(&mut rng).filters().iter().cloned());
        let dict = Dictionary::new(filters).unwrap();
        let img = Image::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0));
        let params = CscParams::new(1e-9).with_max_iter(2000).with_rel_tol(1e-10);
        let out = denoise(&img, &dict, &params, CscVariant::Csc1, 7.0).unwrap();
        assert!(psnr(&img, &out, img.max()).unwrap() >= 60.0);
    }
}
