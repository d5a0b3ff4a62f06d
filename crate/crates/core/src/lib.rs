//! Faithfulness and stability evaluation of CAM / Grad-CAM explanations for
//! skeleton-based human action recognition.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod cli;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod perturbation;
pub mod seed;
pub mod skeleton;

pub use error::{Error, Result};
