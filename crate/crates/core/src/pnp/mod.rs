//! Plug-and-Play reconstruction.
//!
//! Every outer iteration runs, in order:
//!
//! 1. `x̃ = v̂ − u`
//! 2. `x̂ = argmin_x ½‖y − Ax‖²_W + (β/2)‖x − x̃‖²` (partially, by OGM)
//! 3. `ṽ = x̂ + u`
//! 4. `v̂ = H(ṽ)`
//! 5. `u = u + (x̂ − v̂)`
//!
//! starting from `x̂ = v̂ = fbp(y)` and `u = 0`.

mod io;
mod psc;

pub use io::{load_patch_dictionary, read_patch_dictionary, save_patch_dictionary, write_patch_dictionary};

pub use psc::{
    learn_patch_dictionary, psc_denoise, PatchDictionary, PatchLearnConfig, PatchLearnOutcome, PscDenoiser,
};

use std::io::Write;
use std::sync::Arc;

use crate::csc::{CscDenoiser, CscParams, CscVariant, Dictionary};
use crate::error::{invalid, Error, Result};
use crate::image::{psnr, Image};
use crate::tomo::{NoiseWeights, Projector, Sinogram};

/// An image-domain denoiser `H`.
pub trait Denoiser {
    fn denoise(&self, noisy: &Image) -> Result<Image>;
}

impl Denoiser for CscDenoiser {
    fn denoise(&self, noisy: &Image) -> Result<Image> {
        CscDenoiser::denoise(self, noisy)
    }
}

/// `H = I`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, noisy: &Image) -> Result<Image> {
        Ok(noisy.clone())
    }
}

/// Which denoiser to plug in, with its dictionary and parameters.
#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    Csc {
        variant: CscVariant,
        dictionary: Arc<Dictionary>,
        params: CscParams,
        lambda_lpf: f64,
    },
    Psc {
        dictionary: Arc<PatchDictionary>,
        lambda: f64,
        stride: usize,
    },
    Identity,
}

impl DenoiserSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DenoiserSpec::Csc { variant, .. } => variant.name(),
            DenoiserSpec::Psc { .. } => "psc",
            DenoiserSpec::Identity => "identity",
        }
    }

    /// Instantiates the denoiser for images of `shape`.
    pub fn build(&self, shape: (usize, usize)) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            DenoiserSpec::Csc {
                variant,
                dictionary,
                params,
                lambda_lpf,
            } => Box::new(CscDenoiser::new(dictionary, shape, *params, *variant, *lambda_lpf)?),
            DenoiserSpec::Psc {
                dictionary,
                lambda,
                stride,
            } => Box::new(PscDenoiser::new(dictionary.clone(), *lambda, *stride)?),
            DenoiserSpec::Identity => Box::new(IdentityDenoiser),
        })
    }
}

/// The split variables of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PnPState {
    pub x_hat: Image,
    pub v_hat: Image,
    pub u: Image,
    pub beta: f64,
    pub outer_iter: usize,
}

impl PnPState {
    pub fn primal_gap(&self) -> f64 {
        (&self.x_hat - &self.v_hat).norm()
    }
}

/// The five steps of one outer iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    XTilde,
    XHat,
    VTilde,
    VHat,
    Dual,
}

impl Step {
    pub const ORDER: [Step; 5] = [Step::XTilde, Step::XHat, Step::VTilde, Step::VHat, Step::Dual];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnPConfig {
    pub beta: f64,
    pub outer_iters: usize,
    /// OGM iterations per data-fidelity solve.
    pub f_iters: usize,
}

impl PnPConfig {
    pub fn new(beta: f64, outer_iters: usize, f_iters: usize) -> Self {
        Self {
            beta,
            outer_iters,
            f_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.outer_iters == 0 || self.f_iters == 0 {
            return Err(invalid("iteration counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// One-based outer iteration.
    pub iter: usize,
    pub primal_gap: f64,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PnPOutcome {
    pub state: PnPState,
    pub trace: Vec<TraceRow>,
}

impl PnPOutcome {
    pub fn image(&self) -> &Image {
        &self.state.x_hat
    }
}

/// Runs the loop with a prebuilt projector and denoiser. `reference` adds a
/// PSNR column to the trace; `observer` sees every step's output.
pub fn pnp_run(
    projector: &Projector,
    y: &Sinogram,
    w: &NoiseWeights,
    denoiser: &dyn Denoiser,
    cfg: &PnPConfig,
    reference: Option<&Image>,
    mut observer: Option<&mut dyn FnMut(usize, Step, &Image)>,
) -> Result<PnPOutcome> {
    cfg.validate()?;
    let init = projector.fbp(y)?;
    if let Some(r) = reference {
        init.same_shape(r)?;
    }
    let (h, wd) = init.shape();
    let mut state = PnPState {
        x_hat: init.clone(),
        v_hat: init,
        u: Image::zeros(h, wd),
        beta: cfg.beta,
        outer_iter: 0,
    };
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut notify = |k: usize, s: Step, img: &Image| {
        if let Some(f) = observer.as_deref_mut() {
            f(k, s, img);
        }
    };

    for k in 1..=cfg.outer_iters {
        let x_tilde = &state.v_hat - &state.u;
        notify(k, Step::XTilde, &x_tilde);
        state.x_hat = projector.solve_f(y, w, &x_tilde, cfg.beta, cfg.f_iters)?;
        notify(k, Step::XHat, &state.x_hat);
        let v_tilde = &state.x_hat + &state.u;
        notify(k, Step::VTilde, &v_tilde);
        state.v_hat = denoiser.denoise(&v_tilde).map_err(|e| Error::Denoiser {
            iter: k,
            source: Box::new(e),
        })?;
        if state.v_hat.shape() != (h, wd) {
            return Err(Error::Denoiser {
                iter: k,
                source: Box::new(Error::ShapeMismatch {
                    expected: (h, wd),
                    actual: state.v_hat.shape(),
                }),
            });
        }
        notify(k, Step::VHat, &state.v_hat);
        for ((u, x), v) in state
            .u
            .data_mut()
            .iter_mut()
            .zip(state.x_hat.data())
            .zip(state.v_hat.data())
        {
            *u += x - v;
        }
        notify(k, Step::Dual, &state.u);
        state.outer_iter = k;
        trace.push(TraceRow {
            iter: k,
            primal_gap: state.primal_gap(),
            psnr: reference.map(|r| psnr(r, &state.x_hat, r.max())).transpose()?,
        });
    }
    Ok(PnPOutcome { state, trace })
}

/// Plug-and-Play reconstruction with the denoiser described by `spec`.
pub fn pnp_reconstruct(
    y: &Sinogram,
    w: &NoiseWeights,
    spec: &DenoiserSpec,
    beta: f64,
    outer_iters: usize,
    f_iters: usize,
) -> Result<PnPOutcome> {
    let projector = Projector::new(y.geometry().clone());
    let n = y.geometry().image_side();
    let denoiser = spec.build((n, n))?;
    pnp_run(
        &projector,
        y,
        w,
        denoiser.as_ref(),
        &PnPConfig::new(beta, outer_iters, f_iters),
        None,
        None,
    )
}

/// Writes `iter,primal_gap,psnr`; the PSNR cell is empty without a reference.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "iter,primal_gap,psnr")?;
    for row in trace {
        match row.psnr {
            Some(p) => writeln!(out, "{},{:.10e},{:.6}", row.iter, row.primal_gap, crate::image::psnr_for_csv(p))?,
            None => writeln!(out, "{},{:.10e},", row.iter, row.primal_gap)?,
        }
    }
    Ok(())
}
