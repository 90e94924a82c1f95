//! Sleep staging from single-channel EEG.
//!
//! This crate implements the full pipeline: a chunk-level convolutional
//! encoder feeding recurrent sequence models over 30-second epochs, a
//! distilled compact variant that reuses the frozen encoder, training with
//! decoupled weight decay and a cyclic learning-rate schedule, agreement
//! metrics, and chunk-level attribution of each staging decision. Everything
//! is deterministic given a seed.

pub mod attr;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
