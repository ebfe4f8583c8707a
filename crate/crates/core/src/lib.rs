//! Pseudo-feature generation for multi-class imbalanced classification.
//!
//! A feed-forward classifier is trained on imbalanced data, features are
//! taken from its penultimate layer, minor classes are topped up with
//! pseudo-features drawn from per-class Gaussian fits ("cavity filling"), and
//! only the final linear layer is retrained. The crate also carries the usual
//! comparison strategies (under/oversampling, SMOTE, Gaussian perturbation)
//! and an experiment harness that sweeps the number of minor classes.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod metrics;
pub mod net;
pub mod resample;
pub mod rng;

pub use error::{Error, Result};
