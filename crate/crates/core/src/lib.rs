//! Two-level supervised contrastive learning for multi-turn response selection.
//!
//! The pipeline runs `corpus` → `augment` → `encoder` → `loss` inside the
//! `train` loop, with `metrics` for ranking evaluation and `posttrain` for
//! generating MLM/NSP post-training examples.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod posttrain;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
