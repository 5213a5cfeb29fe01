//! Spatio-temporal forecasting on unified sample-per-node graphs.
//!
//! Every recorded sample becomes its own graph node, so one graph network
//! learns spatial and temporal dependencies jointly, handles missing data
//! without imputation and mixes sampling frequencies in a single graph.
//! The crate carries the full stack needed to train and compare such models
//! against per-station baselines:
//!
//! - [`data`]: gridded station series, feature encodings, scaling, windows
//! - [`corruption`]: burst missing-data injection and baseline imputation
//! - [`graph`]: unified sample-per-node graphs and fixed spatial graphs
//! - [`autodiff`]: minimal reverse-mode differentiation over dense tensors
//! - [`models`]: graph blocks (MPNN, GATv2, TGAT) and all model families
//! - [`training`]: loss, Adam, epoch loop and the experiment matrix
//! - [`evaluation`]: m/s metrics, power-curve energy conversion
//! - [`synth`]: seeded synthetic datasets for desk-scale experiments
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature is
//! on by default and only toggles float intrinsics and `std::error::Error`
//! impls.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod corruption;
pub mod data;
pub mod evaluation;
pub mod fmath;
pub mod graph;
pub mod models;
pub(crate) mod seedstream;
pub mod synth;
pub mod training;

pub use data::{SeriesPair, SeriesSet, StationMeta};

