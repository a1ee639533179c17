//! Dual-branch convolutional/recurrent and graph network for transcription
//! factor binding site prediction, with its data pipeline, training loop and
//! evaluation metrics.

pub mod autodiff;
pub mod data;
pub mod debruijn;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
