//! Switching-time prediction for a coordinated-actuated signal: simulator,
//! feature and label pipeline, LSTM regressor, training and evaluation.

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod ingest;
pub mod labeling;
pub mod neural;
pub mod sequencer;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
