//! Shared value types, their invariants, and their serialized forms.

mod codec;
mod manifest;
mod types;
mod validate;

pub use codec::{decode_matrix, encode_matrix, Dtype, Matrix, MatrixData, Metadata, Persist, MAGIC};
pub use manifest::{CorpusManifest, ManifestEntry, Split};
pub use types::{
    AudioConfig, DiagonalGaussian, LatentSequence, LatentSource, MelSpectrogram, PhonemeSequence, ProsodyTargets,
    SpeakerEmbedding, SpeakerSource, Waveform,
};
pub use validate::{Validate, ValidationReport};
