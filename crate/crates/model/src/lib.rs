//! Language-conditioned grasp detection: a multimodal backbone that marks the
//! grasp target with `[SPT]` tokens, a fusion feature from the target span, and
//! a convolutional grasp head; plus training, baselines and evaluation.

pub mod backbone;
pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod head;
pub mod model;
pub mod nn;
pub mod params;
pub mod train;
pub mod vlm;
pub mod vocab;

pub use error::{ModelError, Result};
