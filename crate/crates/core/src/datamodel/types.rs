use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Feature-extraction settings shared by every mel-spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub hop_length: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self { sample_rate: 22050, hop_length: 256, win_length: 1024, n_mels: 80, fmin: 0.0, fmax: 8000.0 }
    }
}

impl AudioConfig {
    /// Frames produced from `n_samples` samples without padding.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.win_length {
            0
        } else {
            (n_samples - self.win_length) / self.hop_length + 1
        }
    }

    /// Samples needed to produce exactly `n_frames` frames.
    pub fn n_samples(&self, n_frames: usize) -> usize {
        (n_frames.max(1) - 1) * self.hop_length + self.win_length
    }
}

/// `T × M` log-mel energies, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Vec<f32>,
    n_frames: usize,
    pub config: AudioConfig,
}

impl MelSpectrogram {
    pub fn new(frames: Vec<f32>, n_frames: usize, config: AudioConfig) -> Self {
        Self { frames, n_frames, config }
    }

    pub fn from_tensor(t: &Tensor, config: AudioConfig) -> Self {
        Self { frames: t.data.iter().map(|&v| v as f32).collect(), n_frames: t.rows, config }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        if self.n_frames == 0 {
            self.config.n_mels
        } else {
            self.frames.len() / self.n_frames
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let m = self.n_mels();
        &self.frames[t * m..(t + 1) * m]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.n_frames, self.n_mels(), self.frames.iter().map(|&v| f64::from(v)).collect())
    }
}

/// Raw samples at a known rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Phoneme ids from a corpus-defined vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    pub text: Option<String>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids, text: None }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Per-phoneme durations (frames), pitch (Hz, 0 = unvoiced) and energy (RMS).
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyTargets {
    pub durations: Vec<u32>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

impl ProsodyTargets {
    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerSource {
    Lookup,
    Predicted,
    Averaged,
}

impl SpeakerSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerSource::Lookup => "lookup",
            SpeakerSource::Predicted => "predicted",
            SpeakerSource::Averaged => "averaged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lookup" => Some(SpeakerSource::Lookup),
            "predicted" => Some(SpeakerSource::Predicted),
            "averaged" => Some(SpeakerSource::Averaged),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub source: SpeakerSource,
}

impl SpeakerEmbedding {
    pub fn to_row(&self) -> Tensor {
        Tensor::row_vector(self.vector.clone())
    }
}

/// Diagonal Gaussian parameterised by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn standard(n: usize) -> Self {
        Self { mu: alloc::vec![0.0; n], log_var: alloc::vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|&lv| libm::exp(lv)).collect()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|&lv| libm::exp(0.5 * lv)).collect()
    }

    /// `log N(x; mu, diag(exp(log_var)))`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ln_2pi = libm::log(2.0 * core::f64::consts::PI);
        self.mu
            .iter()
            .zip(&self.log_var)
            .zip(x)
            .map(|((&m, &lv), &xi)| -0.5 * (ln_2pi + lv + (xi - m) * (xi - m) * libm::exp(-lv)))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatentSource {
    Recognition,
    Prior,
}

impl LatentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LatentSource::Recognition => "recognition",
            LatentSource::Prior => "prior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recognition" => Some(LatentSource::Recognition),
            "prior" => Some(LatentSource::Prior),
            _ => None,
        }
    }
}

/// `L × D_z` latents together with the noise that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub z: Tensor,
    pub eps: Tensor,
    pub source: LatentSource,
}
