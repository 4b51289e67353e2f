//! The assembled model: encoders, sgCVAE, variance adaptor, decoder and the
//! training-time speaker lookup table, with the training forward pass and the
//! zero-shot inference path.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::datamodel::{
    AudioConfig, LatentSequence, LatentSource, MelSpectrogram, PhonemeSequence, ProsodyTargets, SpeakerEmbedding,
    SpeakerSource,
};
use crate::encoders::{MelEncoder, PhonemeEncoder, RefVector};
use crate::error::{Error, Result};
use crate::nn::Embedding;
use crate::objective::{kl_graph, mse_graph, prosody_graph, total_loss, LossBreakdown, LossParts, LossWeights};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::sgcvae::{standard_normal, Sgcvae};
use crate::synthesis::{MelDecoder, ProsodyPrediction, VarianceAdaptor};
use crate::tensor::Tensor;

/// One training utterance. `targets` holds normalised pitch and energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub mel: Tensor,
    pub phonemes: Vec<usize>,
    pub targets: ProsodyTargets,
    pub speaker: usize,
}

/// Loss terms as tape variables. `spk` is absent when the speaker loss is
/// excluded from the objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub mel: Var,
    pub spk: Option<Var>,
    pub kl: Var,
    pub duration: Var,
    pub pitch: Var,
    pub energy: Var,
}

impl LossVars {
    /// `α·mel + β·spk + γ·kl + duration + pitch + energy` on the tape.
    pub fn weighted_total(&self, tape: &mut Tape<'_>, w: LossWeights) -> Var {
        let mut total = tape.scale(self.mel, w.alpha);
        if let Some(spk) = self.spk {
            let s = tape.scale(spk, w.beta);
            total = tape.add(total, s);
        }
        let k = tape.scale(self.kl, w.gamma);
        total = tape.add(total, k);
        for v in [self.duration, self.pitch, self.energy] {
            total = tape.add(total, v);
        }
        total
    }

    pub fn values(&self, tape: &Tape<'_>) -> LossParts {
        LossParts {
            mel: tape.value(self.mel).item(),
            spk: self.spk.map_or(0.0, |v| tape.value(v).item()),
            kl: tape.value(self.kl).item(),
            duration: tape.value(self.duration).item(),
            pitch: tape.value(self.pitch).item(),
            energy: tape.value(self.energy).item(),
        }
    }
}

/// Quantities of a training example that do not depend on the noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicParts {
    pub content: Tensor,
    pub q_mu: Tensor,
    pub q_log_var: Tensor,
    pub p_mu: Tensor,
    pub p_log_var: Tensor,
    /// Lookup-table embedding `S` of the example's speaker, `1 × D_s`.
    pub speaker: Tensor,
}

/// Decoder output for one noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub z: Tensor,
    pub mel: Tensor,
    /// Predicted speaker embedding `Ŝ`, `1 × D_s`.
    pub speaker: Tensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynthesisOptions {
    /// Draw `ε ~ N(0, I)` from this seed instead of using the posterior mean.
    pub sample_seed: Option<u64>,
    /// Average `Ŝ` over per-reference pipelines in addition to averaging `X`.
    pub average_predicted_speaker: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub durations: Vec<usize>,
    pub prosody: ProsodyPrediction,
    pub speaker: SpeakerEmbedding,
    pub reference: RefVector,
    pub latent: LatentSequence,
    /// Parameter tensors read while synthesising.
    pub touched: BTreeSet<ParamId>,
}

impl Synthesis {
    pub fn touched_groups(&self, params: &ParamStore) -> BTreeSet<u8> {
        self.touched.iter().map(|&id| params.entry(id).group.tag()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub mel_encoder: MelEncoder,
    pub phoneme_encoder: PhonemeEncoder,
    pub sgcvae: Sgcvae,
    pub adaptor: VarianceAdaptor,
    pub decoder: MelDecoder,
    pub speaker_table: Embedding,
}

fn check_config(cfg: &ModelConfig) -> Result<()> {
    let bad = |reason: &str| Err(Error::Invalid { entity: "ModelConfig", reason: reason.into() });
    let dims = [
        cfg.n_mels,
        cfg.vocab_size,
        cfg.n_speakers,
        cfg.d_x,
        cfg.d_c,
        cfg.d_z,
        cfg.d_s,
        cfg.mlp_hidden,
        cfg.d_model,
        cfg.d_ff,
        cfg.heads,
        cfg.conv_channels,
        cfg.conv_kernel,
        cfg.conv_layers,
        cfg.variance_hidden,
        cfg.pitch_bins,
        cfg.energy_bins,
    ];
    if dims.contains(&0) {
        return bad("every width must be positive");
    }
    if cfg.d_c % cfg.heads != 0 || cfg.d_model % cfg.heads != 0 {
        return bad("heads must divide d_c and d_model");
    }
    if !(cfg.log_var_min < cfg.log_var_max) {
        return bad("log_var_min must be below log_var_max");
    }
    Ok(())
}

impl Model {
    /// Builds a freshly initialised model. All randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        check_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mel_encoder = MelEncoder::new(&mut params, &config, &mut rng);
        let phoneme_encoder = PhonemeEncoder::new(&mut params, &config, &mut rng);
        let sgcvae = Sgcvae::new(&mut params, &config, &mut rng);
        let adaptor = VarianceAdaptor::new(&mut params, &config, &mut rng);
        let decoder = MelDecoder::new(&mut params, &config, &mut rng);
        let speaker_table = Embedding::new(
            &mut params,
            "speaker_table",
            ParamGroup::SpeakerTable,
            config.n_speakers,
            config.d_s,
            config.speaker_init_std,
            &mut rng,
        );
        Ok(Self { config, params, mel_encoder, phoneme_encoder, sgcvae, adaptor, decoder, speaker_table })
    }

    /// Rebuilds the module layout for `config` and installs `params`, which
    /// must match it name-for-name and shape-for-shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "config expects {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (want, got) in model.params.entries().iter().zip(params.entries()) {
            if want.name != got.name || want.group != got.group || want.value.shape() != got.value.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn audio_config(&self) -> AudioConfig {
        AudioConfig { n_mels: self.config.n_mels, ..AudioConfig::default() }
    }

    /// Row `index` of the speaker lookup table.
    pub fn speaker_embedding(&self, index: usize) -> Result<SpeakerEmbedding> {
        let table = self.params.get(self.speaker_table.table);
        if index >= table.rows {
            return Err(Error::Invalid {
                entity: "SpeakerEmbedding",
                reason: format!("speaker {index} of {}", table.rows),
            });
        }
        Ok(SpeakerEmbedding { vector: table.row(index).to_vec(), source: SpeakerSource::Lookup })
    }

    /// Builds a training example, normalising pitch and energy with the
    /// model's prosody statistics.
    pub fn example(
        &self,
        mel: &MelSpectrogram,
        phonemes: &PhonemeSequence,
        targets: &ProsodyTargets,
        speaker: usize,
    ) -> Result<TrainingExample> {
        if mel.n_mels() != self.config.n_mels {
            return Err(Error::Shape(format!("mel has {} bands, model expects {}", mel.n_mels(), self.config.n_mels)));
        }
        if targets.len() != phonemes.len() {
            return Err(Error::Shape(format!("{} prosody targets for {} phonemes", targets.len(), phonemes.len())));
        }
        if targets.total_frames() != mel.n_frames() {
            return Err(Error::Shape(format!(
                "durations sum to {} but the mel has {} frames",
                targets.total_frames(),
                mel.n_frames()
            )));
        }
        if targets.durations.contains(&0) {
            return Err(Error::Invalid { entity: "ProsodyTargets", reason: "zero duration".into() });
        }
        if speaker >= self.config.n_speakers {
            return Err(Error::Invalid {
                entity: "TrainingExample",
                reason: format!("speaker {speaker} of {}", self.config.n_speakers),
            });
        }
        Ok(TrainingExample {
            mel: mel.to_tensor(),
            phonemes: phonemes.ids.clone(),
            targets: self.config.prosody.normalize(targets),
            speaker,
        })
    }

    /// Training data path: `X` and `C` from the same utterance, `S` from the
    /// lookup table, `z` from the recognition network with noise `eps`, the
    /// adaptor and decoder conditioned on `S`, the prior trained through KL.
    pub fn loss_graph(
        &self,
        tape: &mut Tape<'_>,
        ex: &TrainingExample,
        eps: &Tensor,
        include_speaker_loss: bool,
    ) -> Result<LossVars> {
        let mel = tape.input(ex.mel.clone());
        let x = self.mel_encoder.forward(tape, mel)?;
        let c = self.phoneme_encoder.forward(tape, &ex.phonemes)?;
        let s = self.speaker_table.forward(tape, &[ex.speaker]);
        let q = self.sgcvae.recognition(tape, x, c)?;
        let p = self.sgcvae.prior(tape, c, s)?;
        let z = self.sgcvae.reparameterize(tape, q, eps)?;
        let spk = if include_speaker_loss && !self.config.flags.disable_speaker_predictor {
            let s_hat = self.sgcvae.predict_speaker(tape, z);
            Some(mse_graph(tape, s, s_hat))
        } else {
            None
        };
        let z_in = self.sgcvae.latent_for_decoder(tape, z, c);
        let adapted = self.adaptor.forward(tape, z_in, s, Some(&ex.targets))?;
        let mel_hat = self.decoder.forward(tape, adapted.frames, s);
        let mel_loss = mse_graph(tape, mel_hat, mel);
        let kl = kl_graph(tape, q, p);
        let (duration, pitch, energy) = prosody_graph(tape, adapted.prediction, &ex.targets);
        Ok(LossVars { mel: mel_loss, spk, kl, duration, pitch, energy })
    }

    /// Loss breakdown for one example and one noise draw.
    pub fn losses(
        &self,
        ex: &TrainingExample,
        eps: &Tensor,
        weights: LossWeights,
        include_speaker_loss: bool,
    ) -> Result<LossBreakdown> {
        let mut tape = Tape::new(&self.params);
        let vars = self.loss_graph(&mut tape, ex, eps, include_speaker_loss)?;
        total_loss(vars.values(&tape), weights)
    }

    pub fn deterministic_parts(&self, ex: &TrainingExample) -> Result<DeterministicParts> {
        let mut tape = Tape::new(&self.params);
        let mel = tape.input(ex.mel.clone());
        let x = self.mel_encoder.forward(&mut tape, mel)?;
        let c = self.phoneme_encoder.forward(&mut tape, &ex.phonemes)?;
        let s = self.speaker_table.forward(&mut tape, &[ex.speaker]);
        let q = self.sgcvae.recognition(&mut tape, x, c)?;
        let p = self.sgcvae.prior(&mut tape, c, s)?;
        Ok(DeterministicParts {
            content: tape.value(c).clone(),
            q_mu: tape.value(q.mu).clone(),
            q_log_var: tape.value(q.log_var).clone(),
            p_mu: tape.value(p.mu).clone(),
            p_log_var: tape.value(p.log_var).clone(),
            speaker: tape.value(s).clone(),
        })
    }

    /// Runs the decoder side of the training path for one noise draw.
    pub fn reconstruct(&self, ex: &TrainingExample, det: &DeterministicParts, eps: &Tensor) -> Result<Reconstruction> {
        let mut tape = Tape::new(&self.params);
        let mu = tape.input(det.q_mu.clone());
        let log_var = tape.input(det.q_log_var.clone());
        let c = tape.input(det.content.clone());
        let s = tape.input(det.speaker.clone());
        let z = self.sgcvae.reparameterize(&mut tape, crate::sgcvae::GaussianVars { mu, log_var }, eps)?;
        let s_hat = self.sgcvae.predict_speaker(&mut tape, z);
        let z_in = self.sgcvae.latent_for_decoder(&mut tape, z, c);
        let adapted = self.adaptor.forward(&mut tape, z_in, s, Some(&ex.targets))?;
        let mel = self.decoder.forward(&mut tape, adapted.frames, s);
        Ok(Reconstruction {
            z: tape.value(z).clone(),
            mel: tape.value(mel).clone(),
            speaker: tape.value(s_hat).clone(),
        })
    }

    /// Mean reference vector `X̄` of `refs`.
    pub fn encode_references(&self, refs: &[MelSpectrogram]) -> Result<RefVector> {
        let mut tape = Tape::new(&self.params);
        let x = self.references_on_tape(&mut tape, refs)?;
        Ok(RefVector { x: tape.value(x.0).data.clone() })
    }

    /// Returns `X̄` and the per-reference `Xᵢ`.
    fn references_on_tape(&self, tape: &mut Tape<'_>, refs: &[MelSpectrogram]) -> Result<(Var, Vec<Var>)> {
        if refs.is_empty() {
            return Err(Error::NoReferences);
        }
        let mut each = Vec::with_capacity(refs.len());
        for r in refs {
            if r.n_mels() != self.config.n_mels {
                return Err(Error::Shape(format!(
                    "reference has {} bands, model expects {}",
                    r.n_mels(),
                    self.config.n_mels
                )));
            }
            let m = tape.input(r.to_tensor());
            each.push(self.mel_encoder.forward(tape, m)?);
        }
        let mut sum = each[0];
        for &x in &each[1..] {
            sum = tape.add(sum, x);
        }
        let mean = tape.scale(sum, 1.0 / refs.len() as f64);
        Ok((mean, each))
    }

    /// Zero-shot inference: `X̄` from the references, `C` from the phonemes,
    /// `z` from the recognition network (posterior mean unless sampling),
    /// `Ŝ` predicted from `z`, then predicted prosody and the decoder on `Ŝ`.
    /// The speaker lookup table and the prior network are never read.
    pub fn synthesize(
        &self,
        phonemes: &PhonemeSequence,
        refs: &[MelSpectrogram],
        opts: &SynthesisOptions,
    ) -> Result<Synthesis> {
        let mut tape = Tape::new(&self.params);
        let (x, each) = self.references_on_tape(&mut tape, refs)?;
        let c = self.phoneme_encoder.forward(&mut tape, &phonemes.ids)?;
        let q = self.sgcvae.recognition(&mut tape, x, c)?;
        let (l, d_z) = tape.shape(q.mu);
        let eps = match opts.sample_seed {
            Some(seed) => standard_normal(l, d_z, &mut ChaCha8Rng::seed_from_u64(seed)),
            None => Tensor::zeros(l, d_z),
        };
        let z = self.sgcvae.reparameterize(&mut tape, q, &eps)?;

        let (s_hat, source) = if self.config.flags.disable_speaker_predictor {
            (tape.input(Tensor::zeros(1, self.config.d_s)), SpeakerSource::Predicted)
        } else if opts.average_predicted_speaker && each.len() > 1 {
            let mut sum = None;
            for &xi in &each {
                let qi = self.sgcvae.recognition(&mut tape, xi, c)?;
                let s_i = self.sgcvae.predict_speaker(&mut tape, qi.mu);
                sum = Some(match sum {
                    Some(acc) => tape.add(acc, s_i),
                    None => s_i,
                });
            }
            let sum = sum.expect("at least one reference");
            (tape.scale(sum, 1.0 / each.len() as f64), SpeakerSource::Averaged)
        } else {
            (self.sgcvae.predict_speaker(&mut tape, z), SpeakerSource::Predicted)
        };

        let z_in = self.sgcvae.latent_for_decoder(&mut tape, z, c);
        let adapted = self.adaptor.forward(&mut tape, z_in, s_hat, None)?;
        let mel = self.decoder.forward(&mut tape, adapted.frames, s_hat);
        let mel_t = tape.value(mel);
        if !mel_t.is_finite() {
            return Err(Error::NonFinite("synthesised mel".into()));
        }
        Ok(Synthesis {
            mel: MelSpectrogram::from_tensor(mel_t, self.audio_config()),
            durations: adapted.durations,
            prosody: ProsodyPrediction::from_tensor(tape.value(adapted.prediction)),
            speaker: SpeakerEmbedding { vector: tape.value(s_hat).data.clone(), source },
            reference: RefVector { x: tape.value(x).data.clone() },
            latent: LatentSequence { z: tape.value(z).clone(), eps, source: LatentSource::Recognition },
            touched: tape.touched_params().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_param_gradient, GradCheckConfig};
    use rand::{Rng, SeedableRng};

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_mels: 6,
            vocab_size: 7,
            n_speakers: 3,
            d_x: 5,
            d_c: 4,
            d_z: 3,
            d_s: 5,
            mlp_hidden: 6,
            d_model: 4,
            d_ff: 6,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            conv_channels: 5,
            conv_layers: 2,
            conv_kernel: 3,
            variance_hidden: 5,
            pitch_bins: 8,
            energy_bins: 8,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn tiny_example(model: &Model, rng: &mut ChaCha8Rng) -> TrainingExample {
        let l = rng.gen_range(2..5);
        let durations: Vec<u32> = (0..l).map(|_| rng.gen_range(2..4)).collect();
        let t: usize = durations.iter().map(|&d| d as usize).sum::<usize>().max(model.config.receptive_field());
        let mut durations = durations;
        let extra = t - durations.iter().map(|&d| d as usize).sum::<usize>();
        durations[0] += extra as u32;
        let mel = standard_normal(t, model.config.n_mels, rng);
        let targets = ProsodyTargets {
            durations,
            pitch: (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            energy: (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let ph = PhonemeSequence::new((0..l).map(|_| rng.gen_range(0..model.config.vocab_size)).collect());
        model
            .example(
                &MelSpectrogram::from_tensor(&mel, model.audio_config()),
                &ph,
                &targets,
                rng.gen_range(0..model.config.n_speakers),
            )
            .unwrap()
    }

    fn refs(model: &Model, n: usize, rng: &mut ChaCha8Rng) -> Vec<MelSpectrogram> {
        (0..n)
            .map(|_| MelSpectrogram::from_tensor(&standard_normal(15, model.config.n_mels, rng), model.audio_config()))
            .collect()
    }

    #[test]
    fn synthesis_never_reads_the_speaker_table_or_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(tiny_config(), 1).unwrap();
        let ph = PhonemeSequence::new(alloc::vec![1, 2, 3]);
        for avg in [false, true] {
            let opts = SynthesisOptions { average_predicted_speaker: avg, ..Default::default() };
            let out = model.synthesize(&ph, &refs(&model, 2, &mut rng), &opts).unwrap();
            let groups = out.touched_groups(&model.params);
            assert!(!groups.contains(&ParamGroup::SpeakerTable.tag()));
            assert!(!groups.contains(&ParamGroup::Prior.tag()));
            assert!(groups.contains(&ParamGroup::SpeakerPredictor.tag()));
            assert_eq!(out.mel.n_frames(), out.durations.iter().sum::<usize>());
        }
    }

    #[test]
    fn k_shot_uses_the_mean_reference_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::new(tiny_config(), 2).unwrap();
        let ph = PhonemeSequence::new(alloc::vec![0, 4]);
        let r = refs(&model, 3, &mut rng);
        let manual: Vec<RefVector> =
            r.iter().map(|m| model.mel_encoder.encode_reference(&model.params, m).unwrap()).collect();
        let manual = RefVector::average(&manual).unwrap();
        let out = model.synthesize(&ph, &r, &SynthesisOptions::default()).unwrap();
        for (a, b) in out.reference.x.iter().zip(&manual.x) {
            assert!((a - b).abs() < 1e-12);
        }
        let one = model.synthesize(&ph, &r[..1], &SynthesisOptions::default()).unwrap();
        let twice = model.synthesize(&ph, &[r[0].clone(), r[0].clone()], &SynthesisOptions::default()).unwrap();
        assert_eq!(one.mel, twice.mel);
        assert_eq!(model.synthesize(&ph, &[], &SynthesisOptions::default()), Err(Error::NoReferences));
        assert!(matches!(
            model.synthesize(&PhonemeSequence::new(alloc::vec![7]), &r, &SynthesisOptions::default()),
            Err(Error::OutOfVocabulary { .. })
        ));
    }

    #[test]
    fn disabled_predictor_feeds_zero_speaker_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = tiny_config();
        cfg.flags.disable_speaker_predictor = true;
        let model = Model::new(cfg, 3).unwrap();
        let out = model
            .synthesize(
                &PhonemeSequence::new(alloc::vec![1, 1]),
                &refs(&model, 1, &mut rng),
                &SynthesisOptions::default(),
            )
            .unwrap();
        assert!(out.speaker.vector.iter().all(|&v| v == 0.0));
        let groups = out.touched_groups(&model.params);
        assert!(!groups.contains(&ParamGroup::SpeakerPredictor.tag()));
    }

    #[test]
    fn sampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = Model::new(tiny_config(), 4).unwrap();
        let ph = PhonemeSequence::new(alloc::vec![2, 3, 1]);
        let r = refs(&model, 1, &mut rng);
        let a = SynthesisOptions { sample_seed: Some(9), ..Default::default() };
        let x = model.synthesize(&ph, &r, &a).unwrap();
        let y = model.synthesize(&ph, &r, &a).unwrap();
        assert_eq!(x, y);
        let mean = model.synthesize(&ph, &r, &SynthesisOptions::default()).unwrap();
        assert_ne!(x.latent.z, mean.latent.z);
    }

    #[test]
    fn from_params_rejects_a_different_layout() {
        let model = Model::new(tiny_config(), 5).unwrap();
        let rebuilt = Model::from_params(tiny_config(), model.params.clone()).unwrap();
        assert_eq!(rebuilt, model);
        let mut other = tiny_config();
        other.d_z = 4;
        assert!(matches!(Model::from_params(other, model.params.clone()), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn full_training_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gc = GradCheckConfig::default();
        for flags in [(false, false), (true, false), (false, true)] {
            let mut cfg = tiny_config();
            cfg.flags.standard_cvae_content_add = flags.0;
            cfg.flags.disable_speaker_predictor = flags.1;
            let model = Model::new(cfg, rng.gen()).unwrap();
            let ex = tiny_example(&model, &mut rng);
            let eps = standard_normal(ex.phonemes.len(), model.config.d_z, &mut rng);
            let r = check_param_gradient(
                &model.params,
                |tape| {
                    let v = model.loss_graph(tape, &ex, &eps, true).unwrap();
                    v.weighted_total(tape, LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.3 })
                },
                None,
                &gc,
                &mut rng,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
