use std::f64::consts::SQRT_2;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

use super::{NoiseWeights, Projector, Sinogram};

/// Safety factor on power-iteration Lipschitz estimates.
const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Restart {
    /// Drop momentum when it points against the descent direction.
    Gradient,
    /// Fall back to the plain gradient step whenever the cost would rise.
    Monotone,
}

/// Optimized gradient method (Kim and Fessler) with restart. `eval` writes
/// the gradient and returns the cost. Returns the last iterate and the cost
/// after every iteration.
fn ogm(
    mut x: Vec<f64>,
    iters: usize,
    lipschitz: f64,
    restart: Restart,
    mut eval: impl FnMut(&[f64], &mut [f64]) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let len = x.len();
    let mut g = vec![0.0; len];
    let mut fx = eval(&x, &mut g);
    let mut y_prev = x.clone();
    let mut y = vec![0.0; len];
    let mut xn = vec![0.0; len];
    let mut gn = vec![0.0; len];
    let mut theta: f64 = 1.0;
    let mut costs = Vec::with_capacity(iters);
    let step = 1.0 / lipschitz;

    for _ in 0..iters {
        for ((yv, xv), gv) in y.iter_mut().zip(&x).zip(&g) {
            *yv = xv - step * gv;
        }
        let mut theta_n = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let against = g
            .iter()
            .zip(y.iter().zip(&y_prev))
            .map(|(gv, (a, b))| gv * (a - b))
            .sum::<f64>()
            > 0.0;
        if restart == Restart::Gradient && against {
            xn.copy_from_slice(&y);
            theta_n = 1.0;
        } else {
            let a = (theta - 1.0) / theta_n;
            let b = theta / theta_n;
            for i in 0..len {
                xn[i] = y[i] + a * (y[i] - y_prev[i]) + b * (y[i] - x[i]);
            }
        }
        let mut fxn = eval(&xn, &mut gn);
        if restart == Restart::Monotone && fxn > fx {
            theta_n = 1.0;
            xn.copy_from_slice(&y);
            fxn = eval(&xn, &mut gn);
            if fxn > fx {
                // rounding only; keep the current point
                xn.copy_from_slice(&x);
                gn.copy_from_slice(&g);
                fxn = fx;
            }
        }
        costs.push(fxn);
        std::mem::swap(&mut y_prev, &mut y);
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        fx = fxn;
        theta = theta_n;
    }
    (x, costs)
}

/// Parameters of the edge-preserving MRF baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrfParams {
    /// Potential exponent, `1 < p ≤ 2`.
    pub p: f64,
    /// Regularization strength; zero gives plain weighted least squares.
    pub gamma: f64,
    /// Potential smoothing; `None` uses `1e-3` times the dynamic range of
    /// the FBP initialization.
    pub smooth_eps: Option<f64>,
    pub iters: usize,
}

impl MrfParams {
    pub fn new(p: f64, gamma: f64, iters: usize) -> Self {
        Self {
            p,
            gamma,
            smooth_eps: None,
            iters,
        }
    }

    pub fn with_smooth_eps(mut self, eps: f64) -> Self {
        self.smooth_eps = Some(eps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(invalid(format!("MRF exponent must be in (1, 2], got {}", self.p)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid(format!("MRF gamma must be >= 0, got {}", self.gamma)));
        }
        if let Some(eps) = self.smooth_eps {
            if !(eps > 0.0) {
                return Err(invalid(format!("MRF smoothing must be positive, got {eps}")));
            }
        }
        if self.iters == 0 {
            return Err(invalid("MRF needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MrfOutcome {
    pub image: Image,
    /// Cost after every iteration.
    pub cost_trace: Vec<f64>,
    pub smooth_eps: f64,
}

impl MrfOutcome {
    pub fn final_cost(&self) -> f64 {
        self.cost_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Neighbor offsets `(di, dj)` covering each 8-neighborhood pair once, with
/// `1 / distance` weights normalized so every interior pixel's weights sum to one.
fn cliques() -> [(isize, isize, f64); 4] {
    let total = 4.0 + 4.0 / SQRT_2;
    [
        (0, 1, 1.0 / total),
        (1, 0, 1.0 / total),
        (1, 1, 1.0 / SQRT_2 / total),
        (1, -1, 1.0 / SQRT_2 / total),
    ]
}

/// `Σ b_ij ψ(x_i − x_j)`; accumulates `γ ∇` into `grad` when given.
fn mrf_penalty(x: &[f64], n: usize, p: f64, eps: f64, gamma: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let eps2 = eps * eps;
    let mut total = 0.0;
    for (di, dj, b) in cliques() {
        for i in 0..n {
            let ti = i as isize + di;
            if ti < 0 || ti >= n as isize {
                continue;
            }
            for j in 0..n {
                let tj = j as isize + dj;
                if tj < 0 || tj >= n as isize {
                    continue;
                }
                let a = i * n + j;
                let c = ti as usize * n + tj as usize;
                let d = x[a] - x[c];
                let base = d * d + eps2;
                total += b * base.powf(0.5 * p);
                if let Some(g) = grad.as_deref_mut() {
                    let dpsi = gamma * b * p * d * base.powf(0.5 * p - 1.0);
                    g[a] += dpsi;
                    g[c] -= dpsi;
                }
            }
        }
    }
    total
}

impl Projector {
    fn data_gradient(&self, y: &Sinogram, w: &NoiseWeights, x: &[f64], r: &mut [f64], g: &mut [f64]) -> f64 {
        self.project_raw(x, r);
        for (rv, yv) in r.iter_mut().zip(y.data()) {
            *rv -= yv;
        }
        let cost = 0.5 * w.quad(r);
        w.apply(r);
        self.backproject_raw(r, g);
        cost
    }

    fn check_problem(&self, y: &Sinogram, w: &NoiseWeights) -> Result<()> {
        if y.geometry() != self.geometry() {
            return Err(invalid("sinogram was acquired with a different geometry"));
        }
        w.check(y.values().shape())
    }

    /// `iters` OGM iterations on `½‖y − Ax‖²_W + (β/2)‖x − x̃‖²`, warm-started at `x̃`.
    pub fn solve_f(
        &self,
        y: &Sinogram,
        w: &NoiseWeights,
        x_tilde: &Image,
        beta: f64,
        iters: usize,
    ) -> Result<Image> {
        self.check_problem(y, w)?;
        let n = self.geometry().image_side();
        if x_tilde.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: (n, n),
                actual: x_tilde.shape(),
            });
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        if iters == 0 {
            return Err(invalid("solve_f needs at least one iteration"));
        }
        let lipschitz = LIPSCHITZ_MARGIN * (self.lambda_max() * w.max() + beta);
        let mut r = vec![0.0; y.data().len()];
        let xt = x_tilde.data();
        let (x, _) = ogm(xt.to_vec(), iters, lipschitz, Restart::Gradient, |x, g| {
            let data = self.data_gradient(y, w, x, &mut r, g);
            let mut prox = 0.0;
            for ((gv, xv), tv) in g.iter_mut().zip(x).zip(xt) {
                let d = xv - tv;
                *gv += beta * d;
                prox += d * d;
            }
            data + 0.5 * beta * prox
        });
        Ok(Image::from_raw(n, n, x))
    }

    /// Edge-preserving MRF reconstruction, initialized from FBP.
    pub fn mrf_reconstruct(&self, y: &Sinogram, w: &NoiseWeights, params: &MrfParams) -> Result<MrfOutcome> {
        params.validate()?;
        self.check_problem(y, w)?;
        let n = self.geometry().image_side();
        let init = self.fbp(y)?;
        let eps = params.smooth_eps.unwrap_or_else(|| {
            let range = init.max() - init.min();
            if range > 0.0 {
                1e-3 * range
            } else {
                1e-3
            }
        });
        let p = params.p;
        let gamma = params.gamma;
        // ψ'' peaks at zero difference; the weighted graph Laplacian has norm ≤ 2
        let reg_lipschitz = gamma * p * eps.powf(p - 2.0) * 2.0;
        let lipschitz = LIPSCHITZ_MARGIN * self.lambda_max() * w.max() + reg_lipschitz;
        let mut r = vec![0.0; y.data().len()];
        let (x, costs) = ogm(init.into_data(), params.iters, lipschitz, Restart::Monotone, |x, g| {
            let data = self.data_gradient(y, w, x, &mut r, g);
            if gamma > 0.0 {
                data + gamma * mrf_penalty(x, n, p, eps, gamma, Some(g))
            } else {
                data
            }
        });
        Ok(MrfOutcome {
            image: Image::from_raw(n, n, x),
            cost_trace: costs,
            smooth_eps: eps,
        })
    }

    /// MRF objective at `x`.
    pub fn mrf_cost(&self, y: &Sinogram, w: &NoiseWeights, x: &Image, p: f64, gamma: f64, eps: f64) -> Result<f64> {
        self.check_problem(y, w)?;
        let mut r = vec![0.0; y.data().len()];
        let mut g = vec![0.0; x.len()];
        let data = self.data_gradient(y, w, x.data(), &mut r, &mut g);
        Ok(data + gamma * mrf_penalty(x.data(), x.height(), p, eps, gamma, None))
    }
}

pub fn solve_f(y: &Sinogram, w: &NoiseWeights, x_tilde: &Image, beta: f64, iters: usize) -> Result<Image> {
    Projector::new(y.geometry().clone()).solve_f(y, w, x_tilde, beta, iters)
}

pub fn mrf_reconstruct(y: &Sinogram, w: &NoiseWeights, params: &MrfParams) -> Result<MrfOutcome> {
    Projector::new(y.geometry().clone()).mrf_reconstruct(y, w, params)
}

pub fn mrf_cost(y: &Sinogram, w: &NoiseWeights, x: &Image, p: f64, gamma: f64, eps: f64) -> Result<f64> {
    Projector::new(y.geometry().clone()).mrf_cost(y, w, x, p, gamma, eps)
}

#[cfg(test)]
mod tests {
    use super::super::projector::tests::dense_matrix;
    use super::super::Geometry;
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::from_fn(n, n, |_, _| rng.random_range(0.0..1.0))
    }

    fn problem(seed: u64) -> (Projector, Sinogram, Image) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::equally_spaced(8, 16).unwrap();
        let p = Projector::new(g);
        let truth = random_image(16, &mut rng);
        let mut y = p.project(&truth).unwrap();
        for v in y.values_mut().data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        (p, y, truth)
    }

    fn dense_prox(p: &Projector, y: &Sinogram, w: &[f64], xt: &Image, beta: f64) -> DVector<f64> {
        let a = dense_matrix(p);
        let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
        let lhs = a.transpose() * &wd * &a + DMatrix::identity(xt.len(), xt.len()) * beta;
        let rhs = a.transpose() * &wd * DVector::from_column_slice(y.data())
            + DVector::from_column_slice(xt.data()) * beta;
        lhs.lu().solve(&rhs).unwrap()
    }

    fn rel_err(x: &Image, oracle: &DVector<f64>) -> f64 {
        let d: f64 = x.data().iter().zip(oracle.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        d.sqrt() / oracle.norm()
    }

    #[test]
    fn identity_geometry_prox_closed_form() {
        let g = Geometry::identity(8).unwrap();
        let y = Sinogram::new(Image::filled(8, 8, 1.0), g).unwrap();
        let x = solve_f(&y, &NoiseWeights::Identity, &Image::zeros(8, 8), 1.0, 200).unwrap();
        assert!(x.data().iter().all(|v| (v - 0.5).abs() <= 1e-6));
    }

    #[test]
    fn huge_beta_returns_the_anchor() {
        let (p, y, truth) = problem(1);
        let xt = truth.map(|v| v + 0.3);
        let x = p.solve_f(&y, &NoiseWeights::Identity, &xt, 1e9, 25).unwrap();
        assert!((&x - &xt).norm() <= 1e-4 * xt.norm());
    }

    #[test]
    fn matches_dense_normal_equations() {
        let (p, y, truth) = problem(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xt = Image::from_fn(16, 16, |i, j| truth[(i, j)] + rng.random_range(-0.2..0.2));
        let wv: Vec<f64> = (0..y.data().len()).map(|_| rng.random_range(0.5..2.0)).collect();
        let (nv, nd) = y.values().shape();
        let w = NoiseWeights::diagonal(Image::new(nv, nd, wv.clone()).unwrap()).unwrap();
        for beta in [1.0, 10.0] {
            let oracle = dense_prox(&p, &y, &wv, &xt, beta);
            let x = p.solve_f(&y, &w, &xt, beta, 200).unwrap();
            assert!(rel_err(&x, &oracle) <= 1e-3, "beta {beta}: {}", rel_err(&x, &oracle));
            let e10 = rel_err(&p.solve_f(&y, &w, &xt, beta, 10).unwrap(), &oracle);
            let e50 = rel_err(&p.solve_f(&y, &w, &xt, beta, 50).unwrap(), &oracle);
            assert!(e50 < e10, "{e50} !< {e10}");
        }
    }

    #[test]
    fn mrf_without_regularization_is_least_squares() {
        let (p, y, _) = problem(4);
        let out = p.mrf_reconstruct(&y, &NoiseWeights::Identity, &MrfParams::new(1.2, 0.0, 4000)).unwrap();
        // minimum-norm correction of the FBP start
        let a = dense_matrix(&p);
        let x0 = DVector::from_column_slice(p.fbp(&y).unwrap().data());
        let resid = DVector::from_column_slice(y.data()) - &a * &x0;
        let oracle = &x0 + a.clone().pseudo_inverse(1e-10).unwrap() * resid;
        let err = rel_err(&out.image, &oracle);
        assert!(err <= 1e-2, "{err}");
    }

    #[test]
    fn mrf_with_huge_gamma_is_flat() {
        let (p, y, _) = problem(5);
        let out = p.mrf_reconstruct(&y, &NoiseWeights::Identity, &MrfParams::new(1.2, 1e8, 300)).unwrap();
        let m = out.image.mean();
        assert!(out.image.variance() <= 1e-6 * m * m, "var {} mean {m}", out.image.variance());
    }

    #[test]
    fn mrf_cost_never_increases() {
        let (p, y, _) = problem(6);
        let out = p.mrf_reconstruct(&y, &NoiseWeights::Identity, &MrfParams::new(1.2, 0.5, 150)).unwrap();
        for pair in out.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        let c = p.mrf_cost(&y, &NoiseWeights::Identity, &out.image, 1.2, 0.5, out.smooth_eps).unwrap();
        assert!((c - out.final_cost()).abs() <= 1e-9 * c.abs());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_image(5, &mut rng).into_data();
        let mut g = vec![0.0; 25];
        mrf_penalty(&x, 5, 1.3, 0.05, 1.0, Some(&mut g));
        for k in [0, 7, 12, 24] {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (mrf_penalty(&xp, 5, 1.3, 0.05, 1.0, None) - mrf_penalty(&xm, 5, 1.3, 0.05, 1.0, None)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6, "{k}: {fd} vs {}", g[k]);
        }
        let w: f64 = cliques().iter().map(|c| 2.0 * c.2).sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (p, y, truth) = problem(8);
        let w = NoiseWeights::Identity;
        assert!(p.solve_f(&y, &w, &truth, 0.0, 5).is_err());
        assert!(p.solve_f(&y, &w, &truth, 1.0, 0).is_err());
        assert!(p.solve_f(&y, &w, &Image::zeros(4, 4), 1.0, 5).is_err());
        assert!(MrfParams::new(1.0, 1.0, 5).validate().is_err());
        assert!(MrfParams::new(2.5, 1.0, 5).validate().is_err());
        assert!(MrfParams::new(1.2, -1.0, 5).validate().is_err());
        assert!(MrfParams::new(1.2, 1.0, 5).with_smooth_eps(0.0).validate().is_err());
    }
}
