//! Recovering latent variables from several noisy measurements.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. It contains:
//!
//! - [`diff`]: a small reverse-mode differentiation engine and Adam.
//! - [`kde`]: Gaussian kernel density machinery.
//! - [`geen`]: the univariate extractor trained by minimizing a kernel
//!   estimate of the KL divergence between the joint density and its
//!   conditional-independence factorization.
//! - [`rae`]: the regularized autoencoder for several latents.
//! - [`datagen`], [`metrics`], [`conditions`], [`panel`]: synthetic designs,
//!   evaluation, identifiability checks and panel preprocessing.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod conditions;
pub mod datagen;
pub mod diff;
pub mod error;
pub mod geen;
pub mod kde;
pub mod matrix;
pub mod metrics;
pub mod panel;
pub mod rae;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
