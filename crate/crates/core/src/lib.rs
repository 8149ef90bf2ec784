//! Few-shot pose distribution adaptation.
//!
//! A style-modulated generator learns a prior over 2D poses; a sparse
//! block-diagonal transfer matrix acting on its per-layer style codes is then
//! calibrated from a handful of target poses, and the adapted generator is
//! sampled to produce unlimited target-like poses.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod pose;
pub mod render;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
