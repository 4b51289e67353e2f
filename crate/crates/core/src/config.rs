//! Model hyper-parameters and prosody normalisation statistics.

use serde::{Deserialize, Serialize};

use crate::datamodel::ProsodyTargets;

/// Switches for the architecture ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Standard-CVAE variant: the decoder input becomes `z + proj(c)`.
    pub standard_cvae_content_add: bool,
    /// Drops the speaker predictor; inference then feeds a zero speaker vector.
    pub disable_speaker_predictor: bool,
}

/// Z-score parameters and bin ranges for pitch and energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProsodyStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    /// Range of normalised pitch covered by the quantisation bins.
    pub pitch_range: (f64, f64),
    pub energy_range: (f64, f64),
}

impl Default for ProsodyStats {
    fn default() -> Self {
        Self {
            pitch_mean: 0.0,
            pitch_std: 1.0,
            energy_mean: 0.0,
            energy_std: 1.0,
            pitch_range: (-3.0, 3.0),
            energy_range: (-3.0, 3.0),
        }
    }
}

impl ProsodyStats {
    /// Statistics over every phoneme of the given targets.
    pub fn fit<'a>(targets: impl IntoIterator<Item = &'a ProsodyTargets>) -> Self {
        let (mut n, mut ps, mut pss, mut es, mut ess) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut pmin, mut pmax, mut emin, mut emax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for t in targets {
            for (&p, &e) in t.pitch.iter().zip(&t.energy) {
                n += 1.0;
                ps += p;
                pss += p * p;
                es += e;
                ess += e * e;
                pmin = pmin.min(p);
                pmax = pmax.max(p);
                emin = emin.min(e);
                emax = emax.max(e);
            }
        }
        if n == 0.0 {
            return Self::default();
        }
        let pitch_mean = ps / n;
        let energy_mean = es / n;
        let pitch_std = libm::sqrt((pss / n - pitch_mean * pitch_mean).max(0.0)).max(1e-6);
        let energy_std = libm::sqrt((ess / n - energy_mean * energy_mean).max(0.0)).max(1e-6);
        let widen = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        Self {
            pitch_mean,
            pitch_std,
            energy_mean,
            energy_std,
            pitch_range: widen((pmin - pitch_mean) / pitch_std, (pmax - pitch_mean) / pitch_std),
            energy_range: widen((emin - energy_mean) / energy_std, (emax - energy_mean) / energy_std),
        }
    }

    /// Returns targets whose pitch and energy are z-scored.
    pub fn normalize(&self, t: &ProsodyTargets) -> ProsodyTargets {
        ProsodyTargets {
            durations: t.durations.clone(),
            pitch: t.pitch.iter().map(|p| (p - self.pitch_mean) / self.pitch_std).collect(),
            energy: t.energy.iter().map(|e| (e - self.energy_mean) / self.energy_std).collect(),
        }
    }
}

/// Network widths and depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub vocab_size: usize,
    /// Rows of the training-time speaker lookup table.
    pub n_speakers: usize,
    pub d_x: usize,
    pub d_c: usize,
    pub d_z: usize,
    pub d_s: usize,
    pub mlp_hidden: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_layers: usize,
    pub variance_hidden: usize,
    pub pitch_bins: usize,
    pub energy_bins: usize,
    pub log_var_min: f64,
    pub log_var_max: f64,
    pub speaker_init_std: f64,
    pub flags: AblationFlags,
    pub prosody: ProsodyStats,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            vocab_size: 32,
            n_speakers: 8,
            d_x: 128,
            d_c: 128,
            d_z: 64,
            d_s: 256,
            mlp_hidden: 256,
            d_model: 128,
            d_ff: 256,
            heads: 2,
            encoder_blocks: 2,
            decoder_blocks: 2,
            conv_channels: 128,
            conv_kernel: 5,
            conv_layers: 3,
            variance_hidden: 128,
            pitch_bins: 64,
            energy_bins: 64,
            log_var_min: -8.0,
            log_var_max: 8.0,
            speaker_init_std: 0.1,
            flags: AblationFlags::default(),
            prosody: ProsodyStats::default(),
        }
    }
}

impl ModelConfig {
    /// Frames a reference mel needs to fill the mel encoder's receptive field.
    pub fn receptive_field(&self) -> usize {
        1 + self.conv_layers * (self.conv_kernel - 1)
    }
}
