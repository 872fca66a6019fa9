//! Early-exit multi-branch 1-D CNNs for automatic modulation classification.
//!
//! The crate covers the whole pipeline: synthetic IQ dataset generation
//! ([`signal`]), layer kernels with explicit backpropagation ([`nn`]), the
//! baseline and early-exit network graphs ([`arch`]), dual-loss training
//! ([`train`]), entropy-gated inference ([`infer`]), metric aggregation
//! ([`eval`]) and flat experiment configs ([`config`]).

pub mod arch;
pub mod config;
pub mod error;
pub mod eval;
pub mod infer;
pub mod nn;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Number of modulation classes.
pub const NUM_CLASSES: usize = 10;
