use rustfft::num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fft::Fft2;
use crate::image::Image;

use super::{CoefficientMaps, Dictionary};

/// DFTs of the zero-padded filters at a fixed image size, stored
/// channel-major (`channel * n + frequency`).
#[derive(Debug, Clone)]
pub struct DictSpectra {
    fft: Fft2,
    channels: usize,
    data: Vec<Complex64>,
}

impl DictSpectra {
    pub fn new(dict: &Dictionary, height: usize, width: usize) -> Result<Self> {
        let (fh, fw) = dict.max_filter_shape();
        if fh > height || fw > width {
            return Err(invalid(format!(
                "filter of size {fh}x{fw} does not fit a {height}x{width} image"
            )));
        }
        let fft = Fft2::new(height, width);
        let n = height * width;
        let mut data = vec![Complex64::default(); dict.len() * n];
        for (m, f) in dict.filters().iter().enumerate() {
            let slot = &mut data[m * n..(m + 1) * n];
            for i in 0..f.height() {
                for j in 0..f.width() {
                    slot[i * width + j] = Complex64::new(f[(i, j)], 0.0);
                }
            }
            fft.forward(slot);
        }
        Ok(Self {
            fft,
            channels: dict.len(),
            data,
        })
    }

    /// Treats each coefficient map as a "filter"; used by the dictionary
    /// update, where the roles of filters and maps are swapped.
    pub(crate) fn from_maps(maps: &[Image], fft: &Fft2) -> Self {
        let n = fft.len();
        let mut data = vec![Complex64::default(); maps.len() * n];
        for (m, map) in maps.iter().enumerate() {
            fft.forward_real_into(map.data(), &mut data[m * n..(m + 1) * n]);
        }
        Self {
            fft: fft.clone(),
            channels: maps.len(),
            data,
        }
    }

    /// Copy with an extra all-ones (impulse filter) channel appended.
    pub(crate) fn with_impulse_channel(&self) -> Self {
        let mut data = self.data.clone();
        data.extend(std::iter::repeat_n(Complex64::new(1.0, 0.0), self.fft.len()));
        Self {
            fft: self.fft.clone(),
            channels: self.channels + 1,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        self.fft.shape()
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn channel(&self, m: usize) -> &[Complex64] {
        let n = self.fft.len();
        &self.data[m * n..(m + 1) * n]
    }

    fn check(&self, shape: (usize, usize)) -> Result<()> {
        if shape != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: shape,
            });
        }
        Ok(())
    }
}

/// `Σ_m d_m * α_m` plus the low-pass component when present.
pub fn synthesize(dict: &Dictionary, coeffs: &CoefficientMaps) -> Result<Image> {
    let (h, w) = coeffs
        .shape()
        .ok_or_else(|| invalid("coefficient maps are empty"))?;
    synthesize_with(&dict.spectra(h, w)?, coeffs)
}

pub fn synthesize_with(spectra: &DictSpectra, coeffs: &CoefficientMaps) -> Result<Image> {
    if coeffs.len() != spectra.channels() {
        return Err(invalid(format!(
            "{} coefficient maps for {} filters",
            coeffs.len(),
            spectra.channels()
        )));
    }
    let (h, w) = spectra.shape();
    let n = h * w;
    let fft = spectra.fft();
    let mut acc = vec![Complex64::default(); n];
    let mut buf = vec![Complex64::default(); n];
    for (m, map) in coeffs.maps.iter().enumerate() {
        spectra.check(map.shape())?;
        fft.forward_real_into(map.data(), &mut buf);
        for ((a, b), d) in acc.iter_mut().zip(&buf).zip(spectra.channel(m)) {
            *a += b * d;
        }
    }
    let mut out = fft.inverse_real(&acc);
    if let Some(low) = &coeffs.lowpass {
        spectra.check(low.shape())?;
        for (o, l) in out.iter_mut().zip(low.data()) {
            *o += l;
        }
    }
    Ok(Image::from_raw(h, w, out))
}

/// Circular cross-correlation of `img` with every filter (the adjoint of
/// per-filter synthesis).
pub fn correlate(dict: &Dictionary, img: &Image) -> Result<CoefficientMaps> {
    correlate_with(&dict.spectra(img.height(), img.width())?, img)
}

pub fn correlate_with(spectra: &DictSpectra, img: &Image) -> Result<CoefficientMaps> {
    spectra.check(img.shape())?;
    let (h, w) = spectra.shape();
    let fft = spectra.fft();
    let y = fft.forward_real(img.data());
    let mut buf = Vec::with_capacity(y.len());
    let maps = (0..spectra.channels())
        .map(|m| {
            buf.clear();
            buf.extend(y.iter().zip(spectra.channel(m)).map(|(a, d)| a * d.conj()));
            fft.inverse(&mut buf);
            Image::from_raw(h, w, buf.iter().map(|c| c.re).collect())
        })
        .collect();
    Ok(CoefficientMaps {
        maps,
        lowpass: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_dict(sizes: &[usize], rng: &mut ChaCha8Rng) -> Dictionary {
        Dictionary::normalized(sizes.iter().map(|&s| random_image(s, s, rng)).collect()).unwrap()
    }

    /// Direct spatial circular convolution: out[p] = Σ_q d[q] a[p - q].
    fn naive_synthesis(dict: &Dictionary, maps: &[Image]) -> Image {
        let (h, w) = maps[0].shape();
        let mut out = Image::zeros(h, w);
        for (d, a) in dict.filters().iter().zip(maps) {
            for pi in 0..h {
                for pj in 0..w {
                    let mut s = 0.0;
                    for qi in 0..d.height() {
                        for qj in 0..d.width() {
                            let ai = (pi + h - qi % h) % h;
                            let aj = (pj + w - qj % w) % w;
                            s += d[(qi, qj)] * a[(ai, aj)];
                        }
                    }
                    out[(pi, pj)] += s;
                }
            }
        }
        out
    }

    #[test]
    fn zero_maps_give_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dict = random_dict(&[2, 3], &mut rng);
        let out = synthesize(&dict, &CoefficientMaps::zeros(2, 6, 6)).unwrap();
        assert_eq!(out.max_abs(), 0.0);
        let c = correlate(&dict, &Image::zeros(6, 6)).unwrap();
        assert!(c.maps.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn impulse_places_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dict = random_dict(&[3], &mut rng);
        let mut a = Image::zeros(8, 8);
        a[(6, 7)] = 1.0;
        let out = synthesize(
            &dict,
            &CoefficientMaps {
                maps: vec![a],
                lowpass: None,
            },
        )
        .unwrap();
        let mut padded = Image::zeros(8, 8);
        for i in 0..3 {
            for j in 0..3 {
                padded[(i, j)] = dict.filter(0)[(i, j)];
            }
        }
        let want = padded.roll(6, 7);
        assert!((&out - &want).max_abs() < 1e-12);
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = random_dict(&[2, 4, 3], &mut rng);
        let maps: Vec<Image> = (0..3).map(|_| random_image(8, 8, &mut rng)).collect();
        let want = naive_synthesis(&dict, &maps);
        let got = synthesize(
            &dict,
            &CoefficientMaps {
                maps,
                lowpass: None,
            },
        )
        .unwrap();
        assert!((&got - &want).max_abs() <= 1e-8);
    }

    #[test]
    fn lowpass_is_added() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dict = random_dict(&[2], &mut rng);
        let low = random_image(5, 5, &mut rng);
        let out = synthesize(
            &dict,
            &CoefficientMaps {
                maps: vec![Image::zeros(5, 5)],
                lowpass: Some(low.clone()),
            },
        )
        .unwrap();
        assert!((&out - &low).max_abs() < 1e-12);
    }

    #[test]
    fn correlation_is_adjoint_of_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dict = random_dict(&[2, 4], &mut rng);
        let maps: Vec<Image> = (0..2).map(|_| random_image(8, 8, &mut rng)).collect();
        let y = random_image(8, 8, &mut rng);
        let coeffs = CoefficientMaps {
            maps,
            lowpass: None,
        };
        let lhs = synthesize(&dict, &coeffs).unwrap().dot(&y);
        let corr = correlate(&dict, &y).unwrap();
        let rhs = coeffs.dot(&corr);
        let scale = coeffs.dot(&coeffs).sqrt() * y.norm();
        assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn autocorrelation_peak_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dict = random_dict(&[4], &mut rng);
        let mut img = Image::zeros(10, 10);
        for i in 0..4 {
            for j in 0..4 {
                img[(i, j)] = dict.filter(0)[(i, j)];
            }
        }
        let c = correlate(&dict, &img).unwrap();
        assert!((c.maps[0][(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_filter_and_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dict = random_dict(&[5], &mut rng);
        assert!(dict.spectra(4, 8).is_err());
        let spectra = dict.spectra(8, 8).unwrap();
        assert!(correlate_with(&spectra, &Image::zeros(8, 9)).is_err());
        assert!(synthesize_with(&spectra, &CoefficientMaps::zeros(1, 9, 8)).is_err());
        assert!(synthesize_with(&spectra, &CoefficientMaps::zeros(2, 8, 8)).is_err());
    }
}
