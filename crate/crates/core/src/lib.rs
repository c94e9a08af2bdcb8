//! Expressive-performance analysis toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod classify;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod emotion;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use config::AnalysisConfig;
pub use emotion::Emotion;
pub use error::{Error, Result};
