//! Credit-rating classification with per-corporation feature graphs.
//!
//! Each record's feature vector is turned into a connected graph over its
//! features ([`c2g`]), stacked graph attention layers ([`gat`]) produce node
//! states that are read out locally and globally ([`model`]), and an MLP
//! maps the readout to rating probabilities. [`train`] fits the network with
//! Adam, [`eval`] computes macro metrics and runs flat baselines, and
//! [`data`] covers loading, cleaning, splitting, oversampling and synthetic
//! data.

pub mod autodiff;
pub mod bench;
pub mod c2g;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gat;
pub mod model;
pub mod train;

pub use error::{Error, Result};
