//! Branched convolutional-LSTM engine for unsupervised (and supervised)
//! event detection in cell videos, with the data pipeline, post-processing
//! and evaluation protocol around it.

pub mod cli;
pub mod config;
pub mod conv_lstm;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod pipeline;
pub mod plot;
pub mod postprocess;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
