//! Patch-based sparse coding: overlapping mean-removed patches coded by
//! ISTA against a patch dictionary, then averaged back into the image.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cdl::TrainingSet;
use crate::error::{invalid, Error, Result};
use crate::image::Image;

use super::Denoiser;

/// ISTA iterations per patch.
pub const ISTA_ITERS: usize = 100;
/// Atoms this coherent with an earlier atom are treated as degenerate.
const DUPLICATE_COHERENCE: f64 = 0.99;
const RESEED_CANDIDATES: usize = 16;

/// `M` unit-norm atoms of length `patch_size²`, stored as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDictionary {
    patch_size: usize,
    atoms: DMatrix<f64>,
}

impl PatchDictionary {
    pub const NORM_TOL: f64 = 1e-10;

    pub fn new(patch_size: usize, atoms: DMatrix<f64>) -> Result<Self> {
        if patch_size == 0 || atoms.nrows() != patch_size * patch_size {
            return Err(invalid(format!(
                "atoms have {} rows, expected {}",
                atoms.nrows(),
                patch_size * patch_size
            )));
        }
        if atoms.ncols() == 0 {
            return Err(invalid("patch dictionary needs at least one atom"));
        }
        for (m, col) in atoms.column_iter().enumerate() {
            let n = col.norm();
            if !((n - 1.0).abs() <= Self::NORM_TOL) {
                return Err(Error::Invariant(format!("atom {m} has norm {n}")));
            }
        }
        Ok(Self { patch_size, atoms })
    }

    /// Scales every column to unit norm; zero columns are rejected.
    pub fn normalized(patch_size: usize, mut atoms: DMatrix<f64>) -> Result<Self> {
        for (m, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if n == 0.0 {
                return Err(Error::Invariant(format!("atom {m} is all zero")));
            }
            col /= n;
        }
        Self::new(patch_size, atoms)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom(&self, m: usize) -> Image {
        let p = self.patch_size;
        Image::from_raw(p, p, self.atoms.column(m).iter().copied().collect())
    }
}

/// Gram matrix and its largest eigenvalue.
fn gram(dict: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let g = dict.transpose() * dict;
    let l = g.clone().symmetric_eigenvalues().max();
    (g, l)
}

fn shrink(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `iters` ISTA steps on `½‖X − Dα‖² + λ‖α‖₁` for all columns of `x` at once.
fn ista(
    dict: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    lipschitz: f64,
    x: &DMatrix<f64>,
    lambda: f64,
    iters: usize,
    init: Option<DMatrix<f64>>,
) -> DMatrix<f64> {
    let b = dict.transpose() * x;
    let mut a = init.unwrap_or_else(|| DMatrix::zeros(dict.ncols(), x.ncols()));
    if lipschitz <= 0.0 {
        return a;
    }
    let step = 1.0 / lipschitz;
    let t = lambda * step;
    for _ in 0..iters {
        let g = gram * &a - &b;
        a.zip_apply(&g, |av, gv| *av = shrink(*av - step * gv, t));
    }
    a
}

/// Top-left corners of patches at `stride`, in row-major order.
fn corners(h: usize, w: usize, stride: usize) -> Vec<(usize, usize)> {
    (0..h)
        .step_by(stride)
        .flat_map(|i| (0..w).step_by(stride).map(move |j| (i, j)))
        .collect()
}

/// Mean-removed circular patches as columns, plus their means.
fn extract(img: &Image, p: usize, at: &[(usize, usize)]) -> (DMatrix<f64>, Vec<f64>) {
    let (h, w) = img.shape();
    let mut x = DMatrix::zeros(p * p, at.len());
    let mut means = Vec::with_capacity(at.len());
    for (k, &(i0, j0)) in at.iter().enumerate() {
        let mut col = x.column_mut(k);
        for a in 0..p {
            for b in 0..p {
                col[a * p + b] = img[((i0 + a) % h, (j0 + b) % w)];
            }
        }
        let m = col.mean();
        col.add_scalar_mut(-m);
        means.push(m);
    }
    (x, means)
}

fn check_args(shape: (usize, usize), p: usize, lambda: f64, stride: usize) -> Result<()> {
    if p > shape.0 || p > shape.1 {
        return Err(invalid(format!("patch size {p} exceeds image {shape:?}")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if stride == 0 || stride > p {
        return Err(invalid(format!("stride must be in 1..={p}, got {stride}")));
    }
    Ok(())
}

/// PSC denoiser with the Gram matrix cached.
#[derive(Debug, Clone)]
pub struct PscDenoiser {
    dict: Arc<PatchDictionary>,
    lambda: f64,
    stride: usize,
    gram: DMatrix<f64>,
    lipschitz: f64,
}

impl PscDenoiser {
    pub fn new(dict: Arc<PatchDictionary>, lambda: f64, stride: usize) -> Result<Self> {
        let p = dict.patch_size();
        check_args((p, p), p, lambda, stride)?;
        let (gram, lipschitz) = gram(dict.atoms());
        Ok(Self {
            dict,
            lambda,
            stride,
            gram,
            lipschitz,
        })
    }

    pub fn denoise(&self, v: &Image) -> Result<Image> {
        let p = self.dict.patch_size();
        check_args(v.shape(), p, self.lambda, self.stride)?;
        let (h, w) = v.shape();
        let at = corners(h, w, self.stride);
        let (x, means) = extract(v, p, &at);
        let d = self.dict.atoms();
        let codes = ista(d, &self.gram, self.lipschitz, &x, self.lambda, ISTA_ITERS, None);
        let rec = d * codes;
        let mut sum = Image::zeros(h, w);
        let mut count = Image::zeros(h, w);
        for (k, &(i0, j0)) in at.iter().enumerate() {
            let col = rec.column(k);
            for a in 0..p {
                for b in 0..p {
                    let px = ((i0 + a) % h, (j0 + b) % w);
                    sum[px] += col[a * p + b] + means[k];
                    count[px] += 1.0;
                }
            }
        }
        for (s, c) in sum.data_mut().iter_mut().zip(count.data()) {
            *s /= c;
        }
        Ok(sum)
    }
}

impl Denoiser for PscDenoiser {
    fn denoise(&self, noisy: &Image) -> Result<Image> {
        PscDenoiser::denoise(self, noisy)
    }
}

pub fn psc_denoise(v: &Image, pdict: &PatchDictionary, lambda: f64, stride: usize) -> Result<Image> {
    PscDenoiser::new(Arc::new(pdict.clone()), lambda, stride)?.denoise(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLearnConfig {
    pub atoms: usize,
    pub patch_size: usize,
    pub iters: usize,
    pub seed: u64,
    /// Sparsity weight; `None` uses `0.1 ·` mean training patch norm.
    pub lambda: Option<f64>,
    /// Patch extraction stride; `None` uses `max(1, patch_size / 2)`.
    pub stride: Option<usize>,
}

impl PatchLearnConfig {
    pub fn new(atoms: usize, patch_size: usize, iters: usize, seed: u64) -> Self {
        Self {
            atoms,
            patch_size,
            iters,
            seed,
            lambda: None,
            stride: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchLearnOutcome {
    pub dictionary: PatchDictionary,
    pub lambda: f64,
    /// Objective after each alternation.
    pub objective_trace: Vec<f64>,
    pub reseeded: usize,
}

fn objective(x: &DMatrix<f64>, d: &DMatrix<f64>, a: &DMatrix<f64>, lambda: f64) -> f64 {
    let r = x - d * a;
    0.5 * r.norm_squared() + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Alternates ISTA sparse coding with a ridge-regularized MOD update of the
/// atoms. Steps that would raise the objective are discarded.
pub fn learn_patch_dictionary(train: &TrainingSet, cfg: &PatchLearnConfig) -> Result<PatchLearnOutcome> {
    let p = cfg.patch_size;
    let m = cfg.atoms;
    if p == 0 || m == 0 || cfg.iters == 0 {
        return Err(invalid("atoms, patch size and iterations must be positive"));
    }
    let (h, w) = train.shape();
    if p > h || p > w {
        return Err(invalid(format!("patch size {p} exceeds training image {h}x{w}")));
    }
    let stride = cfg.stride.unwrap_or((p / 2).max(1));
    if stride == 0 {
        return Err(invalid("stride must be positive"));
    }
    let at = corners(h, w, stride);
    let blocks: Vec<DMatrix<f64>> = train.images().iter().map(|img| extract(img, p, &at).0).collect();
    let total = blocks.iter().map(|b| b.ncols()).sum::<usize>();
    if total < m {
        return Err(invalid(format!("{total} training patches for {m} atoms")));
    }
    let mut x = DMatrix::zeros(p * p, total);
    let mut col = 0;
    for b in &blocks {
        x.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    let lambda = match cfg.lambda {
        Some(l) if l >= 0.0 => l,
        Some(l) => return Err(invalid(format!("lambda must be >= 0, got {l}"))),
        None => 0.1 * x.column_iter().map(|c| c.norm()).sum::<f64>() / total as f64,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut d = DMatrix::zeros(p * p, m);
    let picks = sample(&mut rng, total, m);
    for (k, idx) in picks.iter().enumerate() {
        let c = x.column(idx);
        let n = c.norm();
        if n > 1e-12 {
            d.set_column(k, &(c / n));
        } else {
            let g = random_unit(&mut rng, p * p);
            d.set_column(k, &g);
        }
    }

    let mut codes = DMatrix::zeros(m, total);
    let mut current = objective(&x, &d, &codes, lambda);
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut reseeded = 0;
    for _ in 0..cfg.iters {
        let (g, l) = gram(&d);
        let cand = ista(&d, &g, l, &x, lambda, ISTA_ITERS, Some(codes.clone()));
        let obj = objective(&x, &d, &cand, lambda);
        if obj <= current {
            codes = cand;
            current = obj;
        }

        let aat = &codes * codes.transpose();
        let ridge = 1e-8 * (aat.trace() / m as f64).max(1e-12);
        let lhs = aat + DMatrix::identity(m, m) * ridge;
        if let Some(chol) = lhs.cholesky() {
            let mut cand_d = chol.solve(&(&codes * x.transpose())).transpose();
            let residual = &x - &d * &codes;
            let mut reset = Vec::new();
            for k in 0..m {
                let n = cand_d.column(k).norm();
                let duplicate = n > 1e-12
                    && (0..k).any(|j| (cand_d.column(j).dot(&cand_d.column(k)) / n).abs() > DUPLICATE_COHERENCE);
                if n > 1e-12 && !duplicate {
                    let c = cand_d.column(k) / n;
                    cand_d.set_column(k, &c);
                } else {
                    let c = reseed_column(&residual, &mut rng);
                    cand_d.set_column(k, &c);
                    reset.push(k);
                }
            }
            let obj = objective(&x, &cand_d, &codes, lambda);
            if obj <= current {
                d = cand_d;
                current = obj;
            } else if !reset.is_empty() {
                // a fresh atom only pays off once the codes adapt to it
                let mut warm = codes.clone();
                for &k in &reset {
                    warm.row_mut(k).fill(0.0);
                }
                let (g, l) = gram(&cand_d);
                let recoded = ista(&cand_d, &g, l, &x, lambda, ISTA_ITERS, Some(warm));
                let obj = objective(&x, &cand_d, &recoded, lambda);
                if obj <= current {
                    d = cand_d;
                    codes = recoded;
                    current = obj;
                    reseeded += reset.len();
                }
            }
        }
        if m > 1 {
            // swap the least used atom for the worst represented patch
            let usage: Vec<f64> = codes.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
            let k = (0..m).fold(0, |b, i| if usage[i] < usage[b] { i } else { b });
            let residual = &x - &d * &codes;
            let (rn, worst) = residual
                .column_iter()
                .enumerate()
                .map(|(j, c)| (c.norm(), j))
                .fold((0.0, 0), |b, c| if c.0 > b.0 { c } else { b });
            if rn > 1e-12 {
                let mut cand_d = d.clone();
                cand_d.set_column(k, &(residual.column(worst) / rn));
                let mut warm = codes.clone();
                warm.row_mut(k).fill(0.0);
                let (g, l) = gram(&cand_d);
                let recoded = ista(&cand_d, &g, l, &x, lambda, ISTA_ITERS, Some(warm));
                let obj = objective(&x, &cand_d, &recoded, lambda);
                if obj < current {
                    d = cand_d;
                    codes = recoded;
                    current = obj;
                    reseeded += 1;
                }
            }
        }
        trace.push(current);
    }

    Ok(PatchLearnOutcome {
        dictionary: PatchDictionary::new(p, d)?,
        lambda,
        objective_trace: trace,
        reseeded,
    })
}

/// The worst-represented of a few randomly drawn residual patches, or a
/// Gaussian direction when every residual vanishes.
fn reseed_column(residual: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> nalgebra::DVector<f64> {
    let total = residual.ncols();
    let best = (0..RESEED_CANDIDATES)
        .map(|_| rng.random_range(0..total))
        .map(|k| (residual.column(k).norm(), k))
        .fold((0.0, 0), |b, c| if c.0 > b.0 { c } else { b });
    if best.0 > 1e-12 {
        residual.column(best.1) / best.0
    } else {
        random_unit(rng, residual.nrows())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, len: usize) -> nalgebra::DVector<f64> {
    let v = nalgebra::DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    v / n
}
