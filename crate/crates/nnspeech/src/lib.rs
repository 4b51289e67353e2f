//! Synthetic corpus generation, feature extraction, checkpoints, experiment
//! runners and the command line for `nnspeech-core`.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod features;

pub use error::{Error, Result};
