//! Bus-route simulation, calibration and data assimilation.
//!
//! The crate generates synthetic bus GPS data from a stochastic, drifting
//! route model, calibrates simpler model variants against the synthetic
//! history with the cross-entropy method, tracks the drifting system with a
//! particle filter over the calibrated model, and quantifies how much each
//! stage improves short-term position prediction.
//!
//! Modules:
//! - [`sim`] — the route engine (three variants: truth, stochastic,
//!   deterministic) and its state types;
//! - [`datagen`] — ground-truth scenarios and synthetic datasets;
//! - [`calibrate`] — cross-entropy parameter search;
//! - [`filter`] — particle filter with systematic resampling and parameter
//!   roughening;
//! - [`experiments`] — scenario comparisons, RMSE, sensitivity sweep;
//! - [`io`] — config files, manifests, CSV and state-record codecs.

pub mod calibrate;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod io;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
