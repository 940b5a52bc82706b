//! 2-D discrete Fourier transforms on row-major grids.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward/inverse 2-D FFT plan for a fixed `height x width` grid.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn transform(&self, buf: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        assert_eq!(buf.len(), self.len());
        let (h, w) = (self.height, self.width);
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];
        row.process_with_scratch(buf, &mut scratch);
        let mut t = vec![Complex64::default(); h * w];
        transpose(buf, &mut t, h, w);
        col.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, w, h);
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, self.row_fwd.as_ref(), self.col_fwd.as_ref());
    }

    /// Inverse transform in place, including the `1/N` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, self.row_inv.as_ref(), self.col_inv.as_ref());
        let scale = 1.0 / self.len() as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn inverse_real_into(&self, spectrum: &[Complex64], scratch: &mut Vec<Complex64>, out: &mut [f64]) {
        scratch.clear();
        scratch.extend_from_slice(spectrum);
        self.inverse(scratch);
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.re;
        }
    }

    /// Spectra of two real grids from one complex transform.
    pub fn forward_real_pair_into(&self, a: &[f64], b: &[f64], out_a: &mut [Complex64], out_b: &mut [Complex64]) {
        for ((o, &x), &y) in out_a.iter_mut().zip(a).zip(b) {
            *o = Complex64::new(x, y);
        }
        self.forward(out_a);
        let (h, w) = (self.height, self.width);
        // split z = A + iB using A(f) = (Z(f) + Z̄(−f))/2, B(f) = (Z(f) − Z̄(−f))/(2i)
        for i in 0..h {
            let mi = (h - i) % h;
            for j in 0..w {
                let mj = (w - j) % w;
                let (k, m) = (i * w + j, mi * w + mj);
                if m < k {
                    continue;
                }
                let zk = out_a[k];
                let zm = out_a[m];
                out_a[k] = 0.5 * (zk + zm.conj());
                out_b[k] = Complex64::new(0.0, -0.5) * (zk - zm.conj());
                out_a[m] = out_a[k].conj();
                out_b[m] = out_b[k].conj();
            }
        }
    }

    /// Inverse of two Hermitian spectra through one complex transform; the
    /// outputs are the real parts of the individual inverses.
    pub fn inverse_real_pair_into(
        &self,
        spec_a: &[Complex64],
        spec_b: &[Complex64],
        scratch: &mut Vec<Complex64>,
        out_a: &mut [f64],
        out_b: &mut [f64],
    ) {
        scratch.clear();
        scratch.extend(
            spec_a
                .iter()
                .zip(spec_b)
                .map(|(a, b)| a + Complex64::new(-b.im, b.re)),
        );
        self.inverse(scratch);
        for ((c, oa), ob) in scratch.iter().zip(out_a.iter_mut()).zip(out_b.iter_mut()) {
            *oa = c.re;
            *ob = c.im;
        }
    }

    pub fn forward_real_into(&self, data: &[f64], out: &mut [Complex64]) {
        for (o, &v) in out.iter_mut().zip(data) {
            *o = Complex64::new(v, 0.0);
        }
        self.forward(out);
    }
}

/// Writes the `w x h` transpose of the row-major `h x w` grid `src` into `dst`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], h: usize, w: usize) {
    const B: usize = 16;
    for i0 in (0..h).step_by(B) {
        for j0 in (0..w).step_by(B) {
            for i in i0..(i0 + B).min(h) {
                for j in j0..(j0 + B).min(w) {
                    dst[j * h + i] = src[i * w + j];
                }
            }
        }
    }
}

/// Per-frequency `|Ĝ|²` of the circular forward-difference operator, i.e. the
/// eigenvalues of `GᵀG`: `4 sin²(π k/H) + 4 sin²(π l/W)`.
pub fn difference_energy(height: usize, width: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..width)
        .map(|l| 4.0 * (PI * l as f64 / width as f64).sin().powi(2))
        .collect();
    let mut out = Vec::with_capacity(height * width);
    for k in 0..height {
        let c = 4.0 * (PI * k as f64 / height as f64).sin().powi(2);
        out.extend(row.iter().map(|r| r + c));
    }
    out
}
