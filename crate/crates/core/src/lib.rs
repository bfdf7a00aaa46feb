//! Progressive subsampling of oversampled measurement data.
//!
//! A scoring network and a reconstruction network are trained together while a
//! recursive-feature-elimination loop anneals a channel mask from all `N`
//! measurements down to `M`. A greedy architecture search adapts both networks
//! between elimination steps. The crate also carries the hard-selection
//! baseline, the synthetic data generator and the experiment harness.
//!
//! Module map:
//!
//! - [`nn`]: dense MLP engine (forward, backward, Adam, He init, checkpoints).
//! - [`subsample`]: removal schedule, lowest-score selection, mask annealing,
//!   exponentially averaged scores.
//! - [`models`]: dual scoring/reconstruction model, the progressive driver and
//!   the hard-selection baseline.
//! - [`nas`]: greedy architecture tuner.
//! - [`data`]: datasets, normalization, folds, synthetic generator, file formats.
//! - [`harness`]: experiment configuration, sequential runs, statistics, reports.

pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod nas;
pub mod nn;
pub mod subsample;

pub use error::{Error, Result};
