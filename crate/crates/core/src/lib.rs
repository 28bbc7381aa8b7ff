//! Two-stage cascaded ensemble for suicide-risk text classification.
//!
//! Stage 1 scores every post with a fast probability scorer and accepts
//! short, confidently-scored posts directly. Everything else escalates to
//! Stage 2, which is either a vote of persona-prompted chat agents (with the
//! Stage-1 label as tie-breaker) or a weighted vote of the Stage-1 scorer
//! and classical learners over analyst-extracted psychological features.

pub mod analysis;
pub mod cascade;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod mlmodels;
pub mod model_io;
pub mod scorers;
pub mod util;

pub use error::{Error, Result};
