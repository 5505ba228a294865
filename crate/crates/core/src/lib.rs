//! Simulation and analysis of dimensional collapse in vector-quantized
//! autoencoders.
//!
//! A linear autoencoder whose bottleneck is the rate-`R` Gaussian
//! water-filling channel (the RD-AE) keeps only the latent modes that are
//! above the water line when the channel is switched on. Training it from a
//! small initialization lets the water level rise faster than weak modes can
//! grow, so they are frozen out for good. The modules here integrate those
//! flows, solve the channel, predict how many modes survive an autoencoder
//! warm-up, and check the picture against a small hard-VQ trainer.
//!
//! - [`spectral`]: variance spectra, PCA of latent samples, effective dimension.
//! - [`waterfill`]: reverse water-filling and per-mode channel parameters.
//! - [`ae_flow`]: plain-AE gradient flow and its closed-form logistic.
//! - [`rdae_diag`]: the diagonal RD-AE flow and its loss plateau.
//! - [`rdae_dense`]: the dense RD-AE flow from Gaussian initialization.
//! - [`warmup`]: surviving-mode prediction and switch-point advice.
//! - [`toyvq`]: hard VQ with straight-through training, k-means and EMA codes.

// `!(x > 0.0)` is deliberate: NaN must fail every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ae_flow;
pub mod error;
mod ode;
pub mod rdae_dense;
pub mod rdae_diag;
pub mod seed;
pub mod spectral;
pub mod toyvq;
pub mod trajectory;
pub mod warmup;
pub mod waterfill;

pub use error::{Error, Result};
pub use spectral::Spectrum;
pub use trajectory::{Snapshot, Trajectory, TrajectoryKind};
