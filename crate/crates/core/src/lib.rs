//! Desk-scale toolkit for traffic event recognition on distributed
//! fiber-optic strain-rate recordings.
//!
//! The pipeline runs end to end on synthetic data: [`sim`] generates
//! spatio-temporal strain-rate scenes with ground-truth annotations,
//! [`dsp`] filters and windows the signals, [`features`] turns windows
//! into fixed-layout feature sequences, [`layers`] composes recurrent
//! models with spatial/temporal attention on top of the [`engine`]
//! autodiff core, and [`train`]/[`eval`] provide the training,
//! cross-validation, ablation and transfer protocols.

pub mod dsp;
pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod layers;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::DasError;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, DasError>;
