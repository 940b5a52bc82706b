//! Convolutional sparse representation regularizers for tomographic
//! reconstruction.
//!
//! The crate is organized bottom-up:
//!
//! * [`image`]: grids, circular finite differences, the Tikhonov low/high-pass
//!   split and PSNR.
//! * [`csc`]: convolutional sparse coding (plain, weighted-ℓ1 and joint
//!   low-pass variants) solved by frequency-domain ADMM.
//! * [`cdl`]: convolutional dictionary learning and the dictionary file format.
//! * [`tomo`]: the parallel-beam projector with its matched adjoint, FBP, the
//!   OGM data-fidelity solver and the MRF baseline.
//! * [`pnp`]: the Plug-and-Play loop, denoiser adapters and the patch-based
//!   sparse coding baseline.
//! * [`sim`]: phantoms and noise injection.

pub mod cdl;
pub mod csc;
pub mod error;
pub mod fft;
pub mod image;
pub mod pnp;
pub mod sim;
pub mod tomo;

pub use error::{Error, Result};
pub use image::{GradientField, Image};
