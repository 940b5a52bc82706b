use crate::error::{invalid, Result};
use crate::fft::{difference_energy, Fft2};

use super::{GradientField, Image};

/// Value written in place of an infinite PSNR (identical images) in CSV output.
pub const PSNR_INF_SENTINEL: f64 = 999.0;

/// Circular forward differences:
/// `dx[i,j] = x[i, j+1] - x[i,j]`, `dy[i,j] = x[i+1, j] - x[i,j]` (indices mod shape).
pub fn finite_difference(img: &Image) -> GradientField {
    let (h, w) = img.shape();
    let x = img.data();
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for i in 0..h {
        let down = ((i + 1) % h) * w;
        for j in 0..w {
            let right = (j + 1) % w;
            let p = i * w + j;
            dx[p] = x[i * w + right] - x[p];
            dy[p] = x[down + j] - x[p];
        }
    }
    GradientField {
        dx: Image::from_raw(h, w, dx),
        dy: Image::from_raw(h, w, dy),
    }
}

/// Exact transpose of [`finite_difference`].
pub fn finite_difference_adjoint(g: &GradientField) -> Image {
    let (h, w) = g.dx.shape();
    let gx = g.dx.data();
    let gy = g.dy.data();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let up = ((i + h - 1) % h) * w;
        for j in 0..w {
            let left = (j + w - 1) % w;
            let p = i * w + j;
            out[p] = gx[i * w + left] - gx[p] + gy[up + j] - gy[p];
        }
    }
    Image::from_raw(h, w, out)
}

/// Solves `(I + λ GᵀG) l = img` exactly in the DFT domain.
pub fn tikhonov_lowpass(img: &Image, lambda_lpf: f64) -> Result<Image> {
    if !(lambda_lpf >= 0.0) || !lambda_lpf.is_finite() {
        return Err(invalid(format!("lambda_lpf must be >= 0, got {lambda_lpf}")));
    }
    if lambda_lpf == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.shape();
    let fft = Fft2::new(h, w);
    let mut spec = fft.forward_real(img.data());
    for (s, e) in spec.iter_mut().zip(difference_energy(h, w)) {
        *s /= 1.0 + lambda_lpf * e;
    }
    Ok(Image::from_raw(h, w, fft.inverse_real(&spec)))
}

/// Returns `(low, high)` with `high = img - low`.
pub fn tikhonov_split(img: &Image, lambda_lpf: f64) -> Result<(Image, Image)> {
    let low = tikhonov_lowpass(img, lambda_lpf)?;
    let high = img - &low;
    Ok((low, high))
}

pub fn highpass(img: &Image, lambda_lpf: f64) -> Result<Image> {
    Ok(tikhonov_split(img, lambda_lpf)?.1)
}

/// `10 log10(peak² / MSE)`; `+inf` when the images are identical.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    reference.same_shape(test)?;
    if !(peak > 0.0) {
        return Err(invalid(format!("peak must be positive, got {peak}")));
    }
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Maps an infinite PSNR to [`PSNR_INF_SENTINEL`].
pub fn psnr_for_csv(value: f64) -> f64 {
    if value.is_infinite() {
        PSNR_INF_SENTINEL
    } else {
        value
    }
}
