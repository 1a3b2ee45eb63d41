//! Training engine and experiment harness for locomotion-mode prediction
//! from windowed wearable-sensor signals.
//!
//! The crate is self-contained: tensors, layers with hand-derived
//! backward passes, optimizers, the two reference CNN architectures, a
//! dataset pipeline (CSV recordings, relabeling, windowing, splits), a
//! synthetic gait generator, the three training protocols, and the
//! evaluation metrics. Everything is deterministic given a seed; see the
//! README for the reproducibility rules.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
