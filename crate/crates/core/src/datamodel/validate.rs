use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::manifest::{CorpusManifest, Split};
use super::types::{
    AudioConfig, DiagonalGaussian, LatentSequence, MelSpectrogram, PhonemeSequence, ProsodyTargets, SpeakerEmbedding,
};

/// Outcome of checking an entity against its invariants. Never mutates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(msg());
        }
    }

    pub fn merge(mut self, other: ValidationReport) -> Self {
        self.violations.extend(other.violations);
        self
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

pub trait Validate {
    fn validate(&self) -> ValidationReport;
}

impl Validate for AudioConfig {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(self.sample_rate > 0, || "sample_rate must be positive".into());
        r.check(self.hop_length > 0, || "hop_length must be positive".into());
        r.check(self.hop_length < self.win_length, || "hop_length must be smaller than win_length".into());
        r.check(self.n_mels >= 1, || "n_mels must be at least 1".into());
        r.check(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0, || {
            "fmin/fmax must satisfy 0 <= fmin < fmax <= nyquist".into()
        });
        r
    }
}

impl Validate for MelSpectrogram {
    fn validate(&self) -> ValidationReport {
        let mut r = self.config.validate();
        r.check(self.n_frames() >= 1, || "mel must have at least one frame".into());
        r.check(self.data().len() == self.n_frames() * self.config.n_mels, || {
            format!("mel has {} values, expected {} x {}", self.data().len(), self.n_frames(), self.config.n_mels)
        });
        r.check(self.data().iter().all(|v| v.is_finite()), || "mel has non-finite entries".into());
        r
    }
}

impl Validate for PhonemeSequence {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(!self.ids.is_empty(), || "phoneme sequence is empty".into());
        r
    }
}

impl PhonemeSequence {
    pub fn validate_vocab(&self, vocab_size: usize) -> ValidationReport {
        let mut r = self.validate();
        if let Some(bad) = self.ids.iter().find(|&&id| id >= vocab_size) {
            r.violations.push(format!("phoneme id {bad} outside vocabulary of size {vocab_size}"));
        }
        r
    }
}

impl Validate for ProsodyTargets {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let l = self.durations.len();
        r.check(l >= 1, || "prosody targets are empty".into());
        r.check(self.pitch.len() == l && self.energy.len() == l, || {
            "length mismatch between durations, pitch and energy".into()
        });
        r.check(self.durations.iter().all(|&d| d >= 1), || "every duration must be at least one frame".into());
        r.check(self.pitch.iter().chain(&self.energy).all(|v| v.is_finite()), || "pitch/energy must be finite".into());
        r
    }
}

impl ProsodyTargets {
    /// Checks the targets alone and their pairing with `mel`.
    pub fn validate_for(&self, mel: &MelSpectrogram) -> ValidationReport {
        let mut r = self.validate();
        r.check(self.total_frames() == mel.n_frames(), || {
            format!("durations sum to {} but mel has {} frames", self.total_frames(), mel.n_frames())
        });
        r
    }
}

impl Validate for SpeakerEmbedding {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(!self.vector.is_empty(), || "speaker embedding is empty".into());
        r.check(self.vector.iter().all(|v| v.is_finite()), || "speaker embedding has non-finite entries".into());
        r
    }
}

impl SpeakerEmbedding {
    pub fn validate_dim(&self, d_s: usize) -> ValidationReport {
        let mut r = self.validate();
        r.check(self.vector.len() == d_s, || {
            format!("speaker embedding has length {}, expected {d_s}", self.vector.len())
        });
        r
    }
}

impl Validate for DiagonalGaussian {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(self.mu.len() == self.log_var.len(), || {
            format!("length mismatch: mu has {}, log_var has {}", self.mu.len(), self.log_var.len())
        });
        r.check(self.mu.iter().chain(&self.log_var).all(|v| v.is_finite()), || {
            "gaussian has non-finite entries".into()
        });
        r
    }
}

impl Validate for LatentSequence {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(self.z.shape() == self.eps.shape(), || "z and eps shapes differ".into());
        r.check(self.z.is_finite() && self.eps.is_finite(), || "latent has non-finite entries".into());
        r
    }
}

impl Validate for CorpusManifest {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let train: BTreeSet<u32> =
            self.entries.iter().filter(|e| e.split == Split::Train).map(|e| e.speaker_id).collect();
        let leaked: BTreeSet<u32> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::UnseenEval && train.contains(&e.speaker_id))
            .map(|e| e.speaker_id)
            .collect();
        r.check(leaked.is_empty(), || format!("unseen-eval speakers also in train: {leaked:?}"));
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            r.check(ids.insert(e.utterance_id.as_str()), || format!("duplicate utterance id {}", e.utterance_id));
            r.check(!e.phonemes.is_empty(), || format!("utterance {} has no phonemes", e.utterance_id));
            for field in [&e.utterance_id, &e.wav, &e.mel, &e.prosody] {
                r.check(!field.contains(['\t', '\n']), || format!("field {field:?} contains a tab or newline"));
            }
        }
        r
    }
}
