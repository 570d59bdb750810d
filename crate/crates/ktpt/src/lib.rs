//! Knowledge-transfer pre-training toolkit.
//!
//! Trains a complex student network against temperature-scaled soft targets
//! produced by a simpler teacher, then fine-tunes on hard targets, alongside
//! RBM and layer-by-layer discriminative pre-training baselines. A
//! deterministic experiment harness runs the whole comparison on a synthetic
//! sequential-classification task and emits result tables.

pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod models;
pub mod numerics;
pub mod pretrain;
pub mod train;

pub use error::{KtError, Result};
