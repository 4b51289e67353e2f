//! Two-stage trainer. Stage 1 optimises every loss except the speaker loss
//! and leaves the speaker predictor untouched; stage 2 trains the full
//! objective end to end.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{Model, TrainingExample};
use crate::objective::{total_loss, LossBreakdown, LossParts, LossWeights};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamGrads, ParamGroup};
use crate::sgcvae::standard_normal;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_steps: 2_000,
            stage2_steps: 8_000,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0005,
            seed: 0,
            checkpoint_every: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.stage1_steps + self.stage2_steps
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Invalid { entity: "TrainConfig", reason: reason.into() });
        if self.total_steps() == 0 {
            return bad("steps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.gamma >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() || !self.gamma.is_finite() {
            return bad("loss weights must be finite and gamma non-negative");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// Stage (1 or 2) of the 0-based step index.
    pub fn stage_of(&self, step: u64) -> u8 {
        if step < self.stage1_steps {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub stage: u8,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub optimizer: Adam,
    pub history: Vec<StepRecord>,
    step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.optimizer, &model.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
        Ok(Self { model, config, optimizer, history: Vec::new(), step: 0, rng })
    }

    /// Completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    pub fn current_stage(&self) -> u8 {
        self.config.stage_of(self.step)
    }

    fn speaker_loss_active(&self) -> bool {
        self.current_stage() == 2 && !self.model.config.flags.disable_speaker_predictor
    }

    /// Parameter groups that receive no updates at the current step.
    pub fn frozen_groups(&self) -> Vec<ParamGroup> {
        let mut frozen = Vec::new();
        if !self.speaker_loss_active() {
            frozen.push(ParamGroup::SpeakerPredictor);
        }
        if !self.model.config.flags.standard_cvae_content_add {
            frozen.push(ParamGroup::ContentProjection);
        }
        frozen
    }

    /// Mean gradient and loss breakdown of the current stage's objective
    /// over `batch`, with one noise tensor per example.
    pub fn batch_gradient(&self, batch: &[&TrainingExample], eps: &[Tensor]) -> Result<(ParamGrads, LossBreakdown)> {
        let weights = self.config.weights();
        let include_spk = self.speaker_loss_active();
        let mut grads = self.model.params.zeros_like();
        let mut parts = LossParts::default();
        for (ex, e) in batch.iter().zip(eps) {
            let mut tape = Tape::new(&self.model.params);
            let vars = self.model.loss_graph(&mut tape, ex, e, include_spk)?;
            let total = vars.weighted_total(&mut tape, weights);
            tape.backward(total, &mut grads);
            let p = vars.values(&tape);
            parts.mel += p.mel;
            parts.spk += p.spk;
            parts.kl += p.kl;
            parts.duration += p.duration;
            parts.pitch += p.pitch;
            parts.energy += p.energy;
        }
        let k = 1.0 / batch.len() as f64;
        grads.scale(k);
        let parts = LossParts {
            mel: parts.mel * k,
            spk: parts.spk * k,
            kl: parts.kl * k,
            duration: parts.duration * k,
            pitch: parts.pitch * k,
            energy: parts.energy * k,
        };
        Ok((grads, total_loss(parts, weights)?))
    }

    /// Samples a batch with replacement, computes the gradient and applies
    /// one Adam update.
    pub fn step(&mut self, data: &[TrainingExample]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Invalid { entity: "TrainingData", reason: "training split is empty".into() });
        }
        if self.is_done() {
            return Err(Error::Invalid { entity: "Trainer", reason: "all configured steps are complete".into() });
        }
        let d_z = self.model.config.d_z;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        let mut eps = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let ex = &data[self.rng.gen_range(0..data.len())];
            eps.push(standard_normal(ex.phonemes.len(), d_z, &mut self.rng));
            batch.push(ex);
        }
        let stage = self.current_stage();
        let step = self.step + 1;
        let (grads, loss) = match self.batch_gradient(&batch, &eps) {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => return Err(Error::Diverged { step, what }),
            Err(e) => return Err(e),
        };
        if !grads.is_finite() {
            return Err(Error::Diverged { step, what: "gradient".into() });
        }
        let frozen = self.frozen_groups();
        self.optimizer.step(&mut self.model.params, &grads, &frozen);
        if let Some(entry) = self.model.params.entries().iter().find(|e| !e.value.is_finite()) {
            return Err(Error::Diverged { step, what: format!("parameter {}", entry.name) });
        }
        self.step = step;
        let record = StepRecord { step, stage, loss };
        self.history.push(record);
        Ok(record)
    }

    /// Runs the remaining steps, calling `after_step` after each one.
    pub fn run<F>(&mut self, data: &[TrainingExample], mut after_step: F) -> Result<()>
    where
        F: FnMut(&Trainer, &StepRecord) -> Result<()>,
    {
        while !self.is_done() {
            let record = self.step(data)?;
            after_step(self, &record)?;
        }
        Ok(())
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

/// Means of `values` over consecutive non-overlapping windows of `window`
/// entries; a trailing partial window is dropped.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    values.chunks_exact(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
