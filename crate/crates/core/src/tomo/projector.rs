use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

use super::{Geometry, Sinogram};

const POWER_ITERS: usize = 20;

/// `f64::floor` without the libm call; exact for the small magnitudes met here.
#[inline(always)]
fn floor(v: f64) -> isize {
    let t = v as isize;
    if (t as f64) > v {
        t - 1
    } else {
        t
    }
}

/// Ray weights above this many entries are recomputed on every call instead
/// of being cached.
const MAX_CACHED_WEIGHTS: usize = 1 << 23;

/// Ray weights in compressed sparse row form, one row per detector bin.
#[derive(Debug, Clone)]
struct RayWeights {
    offsets: Vec<usize>,
    pixels: Vec<u32>,
    weights: Vec<f64>,
}

/// Joseph (ray-driven, linearly interpolating) projector. The
/// backprojector replays the same rays and scatters the same weights, so it
/// is the exact transpose. Weights of small problems are traced once and
/// cached; the cached and traced paths accumulate in the same order.
#[derive(Debug, Clone)]
pub struct Projector {
    geometry: Geometry,
    trig: Vec<(f64, f64)>,
    lambda_max: OnceLock<f64>,
    weights: OnceLock<Option<RayWeights>>,
}

impl Projector {
    pub fn new(geometry: Geometry) -> Self {
        let trig = geometry.angles().iter().map(|a| (a.cos(), a.sin())).collect();
        Self {
            geometry,
            trig,
            lambda_max: OnceLock::new(),
            weights: OnceLock::new(),
        }
    }

    fn ray_weights(&self) -> Option<&RayWeights> {
        self.weights
            .get_or_init(|| {
                let (v, d) = self.geometry.sinogram_shape();
                let n = self.geometry.image_side();
                if v * d * 2 * n > MAX_CACHED_WEIGHTS {
                    return None;
                }
                let mut rw = RayWeights {
                    offsets: Vec::with_capacity(v * d + 1),
                    pixels: Vec::new(),
                    weights: Vec::new(),
                };
                rw.offsets.push(0);
                for view in 0..v {
                    for t in 0..d {
                        self.trace(view, self.detector_offset(t), |p, w| {
                            rw.pixels.push(p as u32);
                            rw.weights.push(w);
                        });
                        rw.offsets.push(rw.pixels.len());
                    }
                }
                Some(rw)
            })
            .as_ref()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let n = self.geometry.image_side();
        if img.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: (n, n),
                actual: img.shape(),
            });
        }
        Ok(())
    }

    fn check_sinogram(&self, sino: &Sinogram) -> Result<()> {
        if sino.geometry() != &self.geometry {
            return Err(invalid("sinogram was acquired with a different geometry"));
        }
        Ok(())
    }

    /// Calls `f(pixel, weight)` for every pixel touched by ray `(view, s)`.
    #[inline]
    fn trace(&self, view: usize, s: f64, mut f: impl FnMut(usize, f64)) {
        let n = self.geometry.image_side();
        let ni = n as isize;
        let cen = (n as f64 - 1.0) / 2.0;
        let (c, sn) = self.trig[view];
        if c.abs() >= sn.abs() {
            let w = 1.0 / c.abs();
            for i in 0..n {
                let y = cen - i as f64;
                let fj = (s - y * sn) / c + cen;
                let j0 = floor(fj);
                let fr = fj - j0 as f64;
                if j0 >= 0 && j0 < ni {
                    f(i * n + j0 as usize, w * (1.0 - fr));
                }
                if j0 + 1 >= 0 && j0 + 1 < ni {
                    f(i * n + (j0 + 1) as usize, w * fr);
                }
            }
        } else {
            let w = 1.0 / sn.abs();
            for j in 0..n {
                let x = j as f64 - cen;
                let fi = cen - (s - x * c) / sn;
                let i0 = floor(fi);
                let fr = fi - i0 as f64;
                if i0 >= 0 && i0 < ni {
                    f(i0 as usize * n + j, w * (1.0 - fr));
                }
                if i0 + 1 >= 0 && i0 + 1 < ni {
                    f((i0 + 1) as usize * n + j, w * fr);
                }
            }
        }
    }

    fn detector_offset(&self, t: usize) -> f64 {
        let d = self.geometry.num_detectors();
        (t as f64 - (d as f64 - 1.0) / 2.0) * self.geometry.detector_spacing()
    }

    pub(crate) fn project_raw(&self, img: &[f64], out: &mut [f64]) {
        if let Geometry::Identity { .. } = self.geometry {
            out.copy_from_slice(img);
            return;
        }
        if let Some(rw) = self.ray_weights() {
            for (r, o) in out.iter_mut().enumerate() {
                let (a, b) = (rw.offsets[r], rw.offsets[r + 1]);
                let mut acc = 0.0;
                for (&p, &w) in rw.pixels[a..b].iter().zip(&rw.weights[a..b]) {
                    acc += w * img[p as usize];
                }
                *o = acc;
            }
            return;
        }
        let d = self.geometry.num_detectors();
        for v in 0..self.trig.len() {
            for t in 0..d {
                let mut acc = 0.0;
                self.trace(v, self.detector_offset(t), |p, w| acc += w * img[p]);
                out[v * d + t] = acc;
            }
        }
    }

    pub(crate) fn backproject_raw(&self, sino: &[f64], out: &mut [f64]) {
        if let Geometry::Identity { .. } = self.geometry {
            out.copy_from_slice(sino);
            return;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(rw) = self.ray_weights() {
            for (r, &val) in sino.iter().enumerate() {
                if val != 0.0 {
                    let (a, b) = (rw.offsets[r], rw.offsets[r + 1]);
                    for (&p, &w) in rw.pixels[a..b].iter().zip(&rw.weights[a..b]) {
                        out[p as usize] += w * val;
                    }
                }
            }
            return;
        }
        let d = self.geometry.num_detectors();
        for v in 0..self.trig.len() {
            for t in 0..d {
                let val = sino[v * d + t];
                if val != 0.0 {
                    self.trace(v, self.detector_offset(t), |p, w| out[p] += w * val);
                }
            }
        }
    }

    pub fn project(&self, img: &Image) -> Result<Sinogram> {
        self.check_image(img)?;
        let (v, d) = self.geometry.sinogram_shape();
        let mut out = vec![0.0; v * d];
        self.project_raw(img.data(), &mut out);
        Ok(Sinogram {
            values: Image::from_raw(v, d, out),
            geometry: self.geometry.clone(),
        })
    }

    pub fn backproject(&self, sino: &Sinogram) -> Result<Image> {
        self.check_sinogram(sino)?;
        let n = self.geometry.image_side();
        let mut out = vec![0.0; n * n];
        self.backproject_raw(sino.data(), &mut out);
        Ok(Image::from_raw(n, n, out))
    }

    /// Largest eigenvalue of `AᵀA` by power iteration, computed once.
    pub fn lambda_max(&self) -> f64 {
        *self.lambda_max.get_or_init(|| {
            if let Geometry::Identity { .. } = self.geometry {
                return 1.0;
            }
            let n = self.geometry.image_side();
            let (v, d) = self.geometry.sinogram_shape();
            let mut x = vec![1.0 / n as f64; n * n];
            let mut ax = vec![0.0; v * d];
            let mut atax = vec![0.0; n * n];
            let mut rayleigh = 0.0;
            for _ in 0..POWER_ITERS {
                self.project_raw(&x, &mut ax);
                rayleigh = ax.iter().map(|a| a * a).sum::<f64>();
                self.backproject_raw(&ax, &mut atax);
                let norm = atax.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return 0.0;
                }
                x.iter_mut().zip(&atax).for_each(|(xv, a)| *xv = a / norm);
            }
            self.project_raw(&x, &mut ax);
            rayleigh.max(ax.iter().map(|a| a * a).sum::<f64>())
        })
    }

    /// Ram-Lak filtered backprojection.
    pub fn fbp(&self, sino: &Sinogram) -> Result<Image> {
        self.check_sinogram(sino)?;
        if let Geometry::Identity { side } = self.geometry {
            return Ok(Image::from_raw(side, side, sino.data().to_vec()));
        }
        let (views, d) = self.geometry.sinogram_shape();
        if views < 2 {
            return Err(invalid("filtered backprojection needs at least two views"));
        }
        let tau = self.geometry.detector_spacing();
        let len = (2 * d).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);

        // spatial ramp kernel, wrapped for circular convolution
        let mut kernel = vec![Complex64::default(); len];
        kernel[0].re = 1.0 / (4.0 * tau * tau);
        for k in (1..d).step_by(2) {
            let h = -1.0 / ((k * k) as f64 * PI * PI * tau * tau);
            kernel[k].re = h;
            kernel[len - k].re = h;
        }
        fwd.process(&mut kernel);

        let mut filtered = vec![0.0; views * d];
        let mut buf = vec![Complex64::default(); len];
        for v in 0..views {
            buf.iter_mut().for_each(|c| *c = Complex64::default());
            for (b, p) in buf.iter_mut().zip(sino.view(v)) {
                b.re = *p;
            }
            fwd.process(&mut buf);
            buf.iter_mut().zip(&kernel).for_each(|(b, k)| *b *= k);
            inv.process(&mut buf);
            for (q, b) in filtered[v * d..(v + 1) * d].iter_mut().zip(&buf) {
                *q = b.re * tau / len as f64;
            }
        }
        let n = self.geometry.image_side();
        let mut out = vec![0.0; n * n];
        self.backproject_raw(&filtered, &mut out);
        let scale = PI / views as f64 * tau;
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(Image::from_raw(n, n, out))
    }
}

pub fn project(img: &Image, geometry: &Geometry) -> Result<Sinogram> {
    Projector::new(geometry.clone()).project(img)
}

pub fn backproject(sino: &Sinogram) -> Result<Image> {
    Projector::new(sino.geometry().clone()).backproject(sino)
}

pub fn fbp(sino: &Sinogram) -> Result<Image> {
    Projector::new(sino.geometry().clone()).fbp(sino)
}
