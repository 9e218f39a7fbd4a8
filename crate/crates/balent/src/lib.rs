//! Balanced-entropy uncertainty estimation for pixel classification, with a
//! pool-based active-learning simulator and a small CLI.
//!
//! The pipeline: a model produces `m` stochastic softmax samples per pixel
//! ([`tensorio::PredictionCube`]), each class's marginal gets a Beta
//! distribution fitted by moments ([`special`]), the closed-form entropy
//! decomposition turns those into per-pixel uncertainty records
//! ([`uncertainty`]), and acquisition functions rank pixels for labeling
//! ([`acquisition`]). The [`simulator`] module wires it all into an
//! end-to-end active-learning loop on a synthetic blob dataset.

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod simulator;
pub mod special;
pub mod tensorio;
pub mod uncertainty;

pub use error::{Error, Result};
