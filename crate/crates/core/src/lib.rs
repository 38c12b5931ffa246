//! Multi-touch conversion attribution.
//!
//! A dual-attention recurrent model estimates conversion from user touch-point
//! sequences and exposes per-touch credit; attribution models are compared by
//! allocating budget from channel ROI and replaying the historical event log.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod darnn;
pub mod error;
pub mod evalkit;
pub mod run;
pub mod seed;
pub mod seqdata;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
