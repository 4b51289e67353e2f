//! Speaker-guided conditional VAE for zero-shot multi-speaker text-to-mel
//! synthesis.
//!
//! This crate is `no_std` (with `alloc`) and holds the numerical core: a small
//! reverse-mode autodiff tape, the encoders, the speaker-guided CVAE, the
//! variance adaptor and mel decoder, the training objective, the trainer,
//! and mel-cepstral distortion. File formats, corpus generation and the
//! command line live in the `nnspeech` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod config;
pub mod datamodel;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod mcd;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod params;
pub mod sgcvae;
pub mod synthesis;
pub mod tensor;
pub mod train;

pub use config::{AblationFlags, ModelConfig, ProsodyStats};
pub use error::{Error, Result};
pub use model::{Model, Synthesis, SynthesisOptions, TrainingExample};
pub use train::{StepRecord, TrainConfig, Trainer};
