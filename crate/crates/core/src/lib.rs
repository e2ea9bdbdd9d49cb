//! Compositional set embeddings for multi-speaker identification and
//! overlap-aware diarization.
//!
//! An embedding network `f` maps inputs into a metric space and a
//! composition network `g` maps two embeddings to the embedding of the
//! union of their speaker sets. Speaker *sets* are inferred by comparing
//! `f(x)` against enrollment embeddings and their compositions.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod diarization;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod nets;
pub mod seed;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
