//! Variance adaptor (duration, pitch, energy + length regulation) and the
//! mel decoder `p(X | Z, S)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, ProsodyStats};
use crate::datamodel::ProsodyTargets;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Embedding, FftBlock, Linear, Mlp};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

/// Predicted per-phoneme prosody. Pitch and energy are in normalised units.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyPrediction {
    pub log_durations: Vec<f64>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

impl ProsodyPrediction {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            log_durations: (0..t.rows).map(|r| t.get(r, 0)).collect(),
            pitch: (0..t.rows).map(|r| t.get(r, 1)).collect(),
            energy: (0..t.rows).map(|r| t.get(r, 2)).collect(),
        }
    }

    /// `round(exp(log d))`, at least one frame per phoneme.
    pub fn rounded_durations(&self) -> Vec<usize> {
        self.log_durations.iter().map(|&ld| round_duration(ld)).collect()
    }
}

pub fn round_duration(log_d: f64) -> usize {
    if log_d.is_nan() {
        return 1;
    }
    let d = libm::round(libm::exp(log_d.min(20.0)));
    if d.is_finite() && d >= 1.0 {
        d as usize
    } else {
        1
    }
}

/// Frame-to-phoneme index map: position `t` repeated `durations[t]` times.
pub fn length_regulate(durations: &[usize]) -> Vec<usize> {
    durations.iter().enumerate().flat_map(|(i, &d)| core::iter::repeat(i).take(d)).collect()
}

/// Output of the variance adaptor on a tape.
#[derive(Debug, Clone)]
pub struct AdaptorOutput {
    /// `T × d_model` frame-rate hidden states.
    pub frames: Var,
    /// `L × 3`: log-duration, pitch, energy.
    pub prediction: Var,
    pub durations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceAdaptor {
    pub predictor: Mlp,
    pub input_proj: Linear,
    pub pitch_embedding: Embedding,
    pub energy_embedding: Embedding,
    stats: ProsodyStats,
    pitch_bins: usize,
    energy_bins: usize,
}

fn bucket(v: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    if !(v > lo) {
        return 0;
    }
    let idx = ((v - lo) / (hi - lo) * bins as f64) as usize;
    idx.min(bins - 1)
}

impl VarianceAdaptor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let g = ParamGroup::VarianceAdaptor;
        Self {
            predictor: Mlp::new(store, "variance.predictor", g, &[cfg.d_z + cfg.d_s, cfg.variance_hidden, 3], rng),
            input_proj: Linear::new(store, "variance.input_proj", g, cfg.d_z, cfg.d_model, true, rng),
            pitch_embedding: Embedding::new(store, "variance.pitch", g, cfg.pitch_bins, cfg.d_model, 0.1, rng),
            energy_embedding: Embedding::new(store, "variance.energy", g, cfg.energy_bins, cfg.d_model, 0.1, rng),
            stats: cfg.prosody,
            pitch_bins: cfg.pitch_bins,
            energy_bins: cfg.energy_bins,
        }
    }

    pub fn pitch_bin(&self, normalized_pitch: f64) -> usize {
        bucket(normalized_pitch, self.stats.pitch_range, self.pitch_bins)
    }

    pub fn energy_bin(&self, normalized_energy: f64) -> usize {
        bucket(normalized_energy, self.stats.energy_range, self.energy_bins)
    }

    /// Predicts prosody from `z_in` and `s`, adds the quantised pitch/energy
    /// embeddings and expands to frame rate.
    ///
    /// With `targets` (normalised pitch/energy) the ground-truth durations,
    /// pitch and energy drive the expansion; otherwise the predictions do.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        z_in: Var,
        s: Var,
        targets: Option<&ProsodyTargets>,
    ) -> Result<AdaptorOutput> {
        let l = tape.shape(z_in).0;
        if let Some(t) = targets {
            if t.len() != l {
                return Err(Error::Shape(format!("{} prosody targets for {l} positions", t.len())));
            }
        }
        let sb = tape.broadcast_rows(s, l);
        let pred_in = tape.concat_cols(&[z_in, sb]);
        let prediction = self.predictor.forward(tape, pred_in);

        let (durations, pitch, energy): (Vec<usize>, Vec<f64>, Vec<f64>) = match targets {
            Some(t) => (t.durations.iter().map(|&d| d as usize).collect(), t.pitch.clone(), t.energy.clone()),
            None => {
                let p = ProsodyPrediction::from_tensor(tape.value(prediction));
                (p.rounded_durations(), p.pitch, p.energy)
            }
        };
        let pitch_ids: Vec<usize> = pitch.iter().map(|&p| self.pitch_bin(p)).collect();
        let energy_ids: Vec<usize> = energy.iter().map(|&e| self.energy_bin(e)).collect();

        let h = self.input_proj.forward(tape, z_in);
        let pe = self.pitch_embedding.forward(tape, &pitch_ids);
        let ee = self.energy_embedding.forward(tape, &energy_ids);
        let h = tape.add(h, pe);
        let h = tape.add(h, ee);
        let frames = tape.gather_rows(h, length_regulate(&durations));
        Ok(AdaptorOutput { frames, prediction, durations })
    }
}

/// Frame-rate transformer with additive speaker conditioning and a linear
/// head to `n_mels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelDecoder {
    pub speaker_proj: Linear,
    pub blocks: Vec<FftBlock>,
    pub head: Linear,
    d_model: usize,
}

impl MelDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let g = ParamGroup::Decoder;
        Self {
            speaker_proj: Linear::new(store, "decoder.speaker_proj", g, cfg.d_s, cfg.d_model, true, rng),
            blocks: (0..cfg.decoder_blocks)
                .map(|i| FftBlock::new(store, &format!("decoder.block{i}"), g, cfg.d_model, cfg.heads, cfg.d_ff, rng))
                .collect(),
            head: Linear::new(store, "decoder.head", g, cfg.d_model, cfg.n_mels, true, rng),
            d_model: cfg.d_model,
        }
    }

    /// `T × d_model` frames and `1 × D_s` speaker → `T × n_mels`.
    pub fn forward(&self, tape: &mut Tape<'_>, frames: Var, s: Var) -> Var {
        let t = tape.shape(frames).0;
        let spk = self.speaker_proj.forward(tape, s);
        let h = tape.add_row(frames, spk);
        let pos = tape.input(sinusoidal_positions(t, self.d_model));
        let mut h = tape.add(h, pos);
        for block in &self.blocks {
            h = block.forward(tape, h);
        }
        self.head.forward(tape, h)
    }
}
