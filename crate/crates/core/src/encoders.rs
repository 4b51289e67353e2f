//! Reference (mel) encoder and phoneme (content) encoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::datamodel::{MelSpectrogram, PhonemeSequence};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, CircularConv1d, Embedding, FftBlock};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

/// Utterance-level summary `X` of a reference mel-spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct RefVector {
    pub x: Vec<f64>,
}

impl RefVector {
    pub fn to_row(&self) -> Tensor {
        Tensor::row_vector(self.x.clone())
    }

    /// Elementwise mean of several reference vectors.
    pub fn average(refs: &[RefVector]) -> Option<RefVector> {
        let first = refs.first()?;
        let mut x = alloc::vec![0.0; first.x.len()];
        for r in refs {
            for (a, b) in x.iter_mut().zip(&r.x) {
                *a += b;
            }
        }
        let k = refs.len() as f64;
        x.iter_mut().for_each(|v| *v /= k);
        Some(RefVector { x })
    }
}

/// Per-phoneme content states `C`, `L × D_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentSequence {
    pub c: Tensor,
}

impl ContentSequence {
    pub fn len(&self) -> usize {
        self.c.rows
    }

    pub fn is_empty(&self) -> bool {
        self.c.rows == 0
    }
}

/// Circular 1-D conv stack over frames followed by temporal mean pooling.
///
/// Circular padding means every output frame sees a full kernel; the
/// pooled output of a sequence tiled `k` times equals that of the sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelEncoder {
    pub convs: Vec<CircularConv1d>,
    receptive_field: usize,
}

impl MelEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(cfg.conv_layers);
        for i in 0..cfg.conv_layers {
            let c_in = if i == 0 { cfg.n_mels } else { cfg.conv_channels };
            let c_out = if i + 1 == cfg.conv_layers { cfg.d_x } else { cfg.conv_channels };
            convs.push(CircularConv1d::new(
                store,
                &format!("mel_encoder.conv{i}"),
                ParamGroup::MelEncoder,
                c_in,
                c_out,
                cfg.conv_kernel,
                rng,
            ));
        }
        Self { convs, receptive_field: cfg.receptive_field() }
    }

    pub fn receptive_field(&self) -> usize {
        self.receptive_field
    }

    /// `T × n_mels` → `1 × D_x`.
    pub fn forward(&self, tape: &mut Tape<'_>, mel: Var) -> Result<Var> {
        let frames = tape.shape(mel).0;
        if frames < self.receptive_field {
            return Err(Error::TooShort { frames, needed: self.receptive_field });
        }
        let mut h = mel;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, h);
            if i + 1 < self.convs.len() {
                h = tape.tanh(h);
            }
        }
        Ok(tape.mean_rows(h))
    }

    pub fn encode_reference(&self, params: &ParamStore, mel: &MelSpectrogram) -> Result<RefVector> {
        let mut tape = Tape::new(params);
        let m = tape.input(mel.to_tensor());
        let x = self.forward(&mut tape, m)?;
        Ok(RefVector { x: tape.value(x).data.clone() })
    }
}

/// Embedding lookup plus sinusoidal positions plus transformer blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeEncoder {
    pub embedding: Embedding,
    pub blocks: Vec<FftBlock>,
    d_c: usize,
}

impl PhonemeEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let embedding = Embedding::new(
            store,
            "phoneme_encoder.embedding",
            ParamGroup::PhonemeEncoder,
            cfg.vocab_size,
            cfg.d_c,
            1.0 / libm::sqrt(cfg.d_c as f64),
            rng,
        );
        let blocks = (0..cfg.encoder_blocks)
            .map(|i| {
                FftBlock::new(
                    store,
                    &format!("phoneme_encoder.block{i}"),
                    ParamGroup::PhonemeEncoder,
                    cfg.d_c,
                    cfg.heads,
                    cfg.d_ff,
                    rng,
                )
            })
            .collect();
        Self { embedding, blocks, d_c: cfg.d_c }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let vocab = self.embedding.len(tape.params());
        if ids.is_empty() {
            return Err(Error::Invalid { entity: "PhonemeSequence", reason: "phoneme sequence is empty".into() });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::OutOfVocabulary { id, vocab });
        }
        let e = self.embedding.forward(tape, ids);
        let pos = tape.input(sinusoidal_positions(ids.len(), self.d_c));
        let mut h = tape.add(e, pos);
        for block in &self.blocks {
            h = block.forward(tape, h);
        }
        Ok(h)
    }

    pub fn encode_phonemes(&self, params: &ParamStore, ph: &PhonemeSequence) -> Result<ContentSequence> {
        let mut tape = Tape::new(params);
        let c = self.forward(&mut tape, &ph.ids)?;
        Ok(ContentSequence { c: tape.value(c).clone() })
    }
}
