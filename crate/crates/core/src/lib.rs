//! Path loss prediction with a close-in (CI) empirical prior whose exponent
//! and additive compensation are predicted by a dual-branch network.
//!
//! The crate is organised bottom-up:
//!
//! - [`raster`]: geo-referenced rasters, bilinear sampling, patch extraction, `.plrg` IO.
//! - [`synth`]: procedural suburban scenes, measurement routes and a propagation oracle.
//! - [`ci`]: free-space path loss, the CI model and its closed-form exponent fit.
//! - [`imaging`]: the Resize / Stacksize / Fullsize environmental images.
//! - [`features`]: the six system parameters and their min-max normalisation.
//! - [`nn`]: a small reverse-mode autodiff tape, layers, Adam and checkpoints.
//! - [`model`]: the hybrid predictor and its comparison variants.
//! - [`train`]: training loop, metrics and the comparison protocol.
//! - [`plot`] / [`manifest`]: SVG route figures and run manifests for the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ci;
pub mod features;
pub mod imaging;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod plot;
pub mod raster;
pub mod synth;
pub mod train;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Reference seed of the synthetic benchmark.
pub const REFERENCE_SEED: u64 = 20_240_601;
