use alloc::string::String;

/// Errors raised by the model, codecs, and evaluation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {entity}: {reason}")]
    Invalid { entity: &'static str, reason: String },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("phoneme id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },
    #[error("mel has {frames} frames, fewer than the receptive field {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("no reference utterances supplied")]
    NoReferences,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },
    #[error("empty overlap after alignment")]
    EmptyAlignment,
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;
