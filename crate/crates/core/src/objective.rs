//! Training objective: mel and speaker reconstruction, diagonal-Gaussian KL,
//! prosody losses, their weighted total, and a Monte Carlo ELBO estimator
//! used to cross-check the bookkeeping.
//!
//! Reductions: mel loss is the mean over `T × M`, speaker loss the mean over
//! `D_s`, and the KL term is the per-position KL (summed over `D_z`)
//! averaged over the `L` positions.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datamodel::{DiagonalGaussian, MelSpectrogram, ProsodyTargets, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::model::{Model, TrainingExample};
use crate::sgcvae::{standard_normal, GaussianVars};
use crate::synthesis::ProsodyPrediction;
use crate::tensor::Tensor;

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean squared error over every mel entry.
pub fn mel_loss(x: &MelSpectrogram, x_hat: &MelSpectrogram) -> Result<f64> {
    if (x.n_frames(), x.n_mels()) != (x_hat.n_frames(), x_hat.n_mels()) {
        return Err(Error::Shape(format!(
            "mel {}x{} vs {}x{}",
            x.n_frames(),
            x.n_mels(),
            x_hat.n_frames(),
            x_hat.n_mels()
        )));
    }
    Ok(mse(&x.to_tensor().data, &x_hat.to_tensor().data))
}

/// Mean squared error over the embedding dimensions.
pub fn speaker_loss(s: &SpeakerEmbedding, s_hat: &SpeakerEmbedding) -> Result<f64> {
    if s.vector.len() != s_hat.vector.len() {
        return Err(Error::Shape(format!("speaker {} vs {}", s.vector.len(), s_hat.vector.len())));
    }
    Ok(mse(&s.vector, &s_hat.vector))
}

/// `KL(q ‖ p)` for diagonal Gaussians:
/// `½ Σᵢ [log(σ²ₚ/σ²_q) − 1 + σ²_q/σ²ₚ + (μ_q − μₚ)²/σ²ₚ]`.
pub fn kl_diag(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    let n = q.dim();
    if p.dim() != n || q.log_var.len() != n || p.log_var.len() != n {
        return Err(Error::Shape(format!("kl between dims {n} and {}", p.dim())));
    }
    let mut total = 0.0;
    for i in 0..n {
        let (lq, lp) = (q.log_var[i], p.log_var[i]);
        let d = q.mu[i] - p.mu[i];
        total += lp - lq - 1.0 + libm::exp(lq - lp) + d * d * libm::exp(-lp);
    }
    Ok(0.5 * total)
}

/// Mean over positions of the per-position KL.
pub fn kl_sequence(q: &[DiagonalGaussian], p: &[DiagonalGaussian]) -> Result<f64> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::Shape(format!("kl over {} vs {} positions", q.len(), p.len())));
    }
    let mut total = 0.0;
    for (a, b) in q.iter().zip(p) {
        total += kl_diag(a, b)?;
    }
    Ok(total / q.len() as f64)
}

/// `(duration, pitch, energy)` mean squared errors. `targets` must already be
/// normalised with the same statistics as the prediction.
pub fn prosody_losses(pred: &ProsodyPrediction, targets: &ProsodyTargets) -> Result<(f64, f64, f64)> {
    let l = targets.len();
    if pred.log_durations.len() != l || pred.pitch.len() != l || pred.energy.len() != l {
        return Err(Error::Shape(format!("{} predictions for {l} targets", pred.log_durations.len())));
    }
    let log_d: Vec<f64> = targets.durations.iter().map(|&d| libm::log(f64::from(d))).collect();
    Ok((mse(&pred.log_durations, &log_d), mse(&pred.pitch, &targets.pitch), mse(&pred.energy, &targets.energy)))
}

/// Weights of the three ELBO-derived terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.0005 }
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mel: f64,
    pub spk: f64,
    pub kl: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl LossParts {
    fn as_array(&self) -> [f64; 6] {
        [self.mel, self.spk, self.kl, self.duration, self.pitch, self.energy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel: f64,
    pub spk: f64,
    pub kl: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossBreakdown {
    pub fn parts(&self) -> LossParts {
        LossParts {
            mel: self.mel,
            spk: self.spk,
            kl: self.kl,
            duration: self.duration,
            pitch: self.pitch,
            energy: self.energy,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }
}

/// `α·mel + β·spk + γ·kl + duration + pitch + energy`.
pub fn total_loss(parts: LossParts, w: LossWeights) -> Result<LossBreakdown> {
    if let Some(bad) = parts.as_array().iter().position(|v| !v.is_finite()) {
        let names = ["mel", "spk", "kl", "duration", "pitch", "energy"];
        return Err(Error::NonFinite(format!("{} loss", names[bad])));
    }
    let total =
        w.alpha * parts.mel + w.beta * parts.spk + w.gamma * parts.kl + parts.duration + parts.pitch + parts.energy;
    Ok(LossBreakdown {
        mel: parts.mel,
        spk: parts.spk,
        kl: parts.kl,
        duration: parts.duration,
        pitch: parts.pitch,
        energy: parts.energy,
        total,
        alpha: w.alpha,
        beta: w.beta,
        gamma: w.gamma,
    })
}

/// Mean squared difference of two same-shape tape variables.
pub fn mse_graph(tape: &mut Tape<'_>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    tape.mean(sq)
}

/// KL term on a tape: per-position KL summed over `D_z`, averaged over positions.
pub fn kl_graph(tape: &mut Tape<'_>, q: GaussianVars, p: GaussianVars) -> Var {
    let positions = tape.shape(q.mu).0 as f64;
    let lv_diff = tape.sub(q.log_var, p.log_var);
    let ratio = tape.exp(lv_diff);
    let dmu = tape.sub(q.mu, p.mu);
    let dmu2 = tape.square(dmu);
    let neg_lp = tape.scale(p.log_var, -1.0);
    let inv_vp = tape.exp(neg_lp);
    let maha = tape.mul(dmu2, inv_vp);
    let a = tape.sub(ratio, lv_diff);
    let b = tape.add(a, maha);
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5 / positions)
}

/// Duration, pitch and energy losses on a tape, from the `L × 3` prediction.
pub fn prosody_graph(tape: &mut Tape<'_>, prediction: Var, targets: &ProsodyTargets) -> (Var, Var, Var) {
    let l = targets.len();
    let log_d = Tensor::from_vec(l, 1, targets.durations.iter().map(|&d| libm::log(f64::from(d))).collect());
    let pitch = Tensor::from_vec(l, 1, targets.pitch.clone());
    let energy = Tensor::from_vec(l, 1, targets.energy.clone());
    let mut term = |col: usize, target: Tensor| {
        let p = tape.slice_cols(prediction, col, col + 1);
        let t = tape.input(target);
        mse_graph(tape, p, t)
    };
    let d = term(0, log_d);
    let p = term(1, pitch);
    let e = term(2, energy);
    (d, p, e)
}

/// Monte Carlo estimate of the modified evidence lower bound
/// `E_q[log p(X|Z,S)] + E_q[log p(S|Z)] − KL(q(Z|X,C) ‖ p(Z|C,S))`, with
/// unit-variance Gaussian observation models for the mel and the speaker
/// embedding.
///
/// Under those observation models the negated ELBO and the training loss
/// terms are related by
/// `−ELBO = (T·M/2)·mel + (D_s/2)·spk + L·kl + ½(T·M + D_s)·ln 2π`,
/// see [`ElboEstimate::loss_equivalent`].
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    /// Mean of `log p(X | z, S)` over the draws.
    pub mel_log_likelihood: f64,
    /// Mean of `log p(S | z)` over the draws.
    pub speaker_log_likelihood: f64,
    /// Mean of `log q(z) − log p(z)` over the draws; estimates the summed KL.
    pub kl_estimate: f64,
    /// Standard error of `kl_estimate`.
    pub kl_std_error: f64,
    /// Standard error of `elbo`.
    pub elbo_std_error: f64,
    /// Mean over the draws of the mel and speaker loss terms.
    pub mean_mel_loss: f64,
    pub mean_speaker_loss: f64,
    /// Closed-form KL term (mean over positions), as used in training.
    pub closed_form_kl: f64,
    pub n_frames: usize,
    pub n_mels: usize,
    pub n_positions: usize,
    pub d_s: usize,
    pub samples: usize,
}

impl ElboEstimate {
    /// Additive constant `½(T·M + D_s)·ln 2π` of the Gaussian log-likelihoods.
    pub fn gaussian_constant(&self) -> f64 {
        0.5 * (self.n_frames * self.n_mels + self.d_s) as f64 * libm::log(2.0 * core::f64::consts::PI)
    }

    /// `−ELBO` predicted from the training loss terms (α = β = 1 in their
    /// sum-reduced form) plus the Gaussian constant.
    pub fn loss_equivalent(&self) -> f64 {
        0.5 * (self.n_frames * self.n_mels) as f64 * self.mean_mel_loss
            + 0.5 * self.d_s as f64 * self.mean_speaker_loss
            + self.n_positions as f64 * self.closed_form_kl
            + self.gaussian_constant()
    }
}

/// Draws `n_samples` latents from the recognition network and averages the
/// ELBO integrand. Oracle use only: it runs one decoder pass per draw.
pub fn elbo_oracle<R: Rng + ?Sized>(
    model: &Model,
    example: &TrainingExample,
    n_samples: usize,
    rng: &mut R,
) -> Result<ElboEstimate> {
    let ln_2pi = libm::log(2.0 * core::f64::consts::PI);
    let det = model.deterministic_parts(example)?;
    let (l, d_z) = det.q_mu.shape();
    let (t, m) = example.mel.shape();
    let d_s = det.speaker.cols;
    let q: Vec<DiagonalGaussian> = (0..l)
        .map(|r| DiagonalGaussian { mu: det.q_mu.row(r).to_vec(), log_var: det.q_log_var.row(r).to_vec() })
        .collect();
    let p: Vec<DiagonalGaussian> = (0..l)
        .map(|r| DiagonalGaussian { mu: det.p_mu.row(r).to_vec(), log_var: det.p_log_var.row(r).to_vec() })
        .collect();
    let closed_form_kl = kl_sequence(&q, &p)?;

    let (mut sum_elbo, mut sum_elbo2) = (0.0, 0.0);
    let (mut sum_mel_ll, mut sum_spk_ll) = (0.0, 0.0);
    let (mut sum_kl, mut sum_kl2) = (0.0, 0.0);
    let (mut sum_mel, mut sum_spk) = (0.0, 0.0);
    for _ in 0..n_samples {
        let eps = standard_normal(l, d_z, rng);
        let recon = model.reconstruct(example, &det, &eps)?;
        let z = &recon.z;
        let mel_sq: f64 = recon.mel.data.iter().zip(&example.mel.data).map(|(a, b)| (a - b) * (a - b)).sum();
        let spk_sq: f64 = recon.speaker.data.iter().zip(&det.speaker.data).map(|(a, b)| (a - b) * (a - b)).sum();
        let mel_ll = -0.5 * mel_sq - 0.5 * (t * m) as f64 * ln_2pi;
        let spk_ll = -0.5 * spk_sq - 0.5 * d_s as f64 * ln_2pi;
        let mut log_ratio = 0.0;
        for r in 0..l {
            log_ratio += q[r].log_density(z.row(r)) - p[r].log_density(z.row(r));
        }
        let sample = mel_ll + spk_ll - log_ratio;
        sum_elbo += sample;
        sum_elbo2 += sample * sample;
        sum_mel_ll += mel_ll;
        sum_spk_ll += spk_ll;
        sum_kl += log_ratio;
        sum_kl2 += log_ratio * log_ratio;
        sum_mel += mel_sq / (t * m) as f64;
        sum_spk += spk_sq / d_s as f64;
    }
    let n = n_samples as f64;
    let std_err = |s: f64, s2: f64| {
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        libm::sqrt(var / n)
    };
    Ok(ElboEstimate {
        elbo: sum_elbo / n,
        mel_log_likelihood: sum_mel_ll / n,
        speaker_log_likelihood: sum_spk_ll / n,
        kl_estimate: sum_kl / n,
        kl_std_error: std_err(sum_kl, sum_kl2),
        elbo_std_error: std_err(sum_elbo, sum_elbo2),
        mean_mel_loss: sum_mel / n,
        mean_speaker_loss: sum_spk / n,
        closed_form_kl,
        n_frames: t,
        n_mels: m,
        n_positions: l,
        d_s,
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{AudioConfig, SpeakerSource};
    use crate::gradcheck::{check_input_gradient, GradCheckConfig};
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn naive_mse(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut n = 0usize;
        for i in 0..a.len() {
            s += (a[i] - b[i]).powi(2);
            n += 1;
        }
        s / n as f64
    }

    fn mel(t: usize, m: usize, data: Vec<f32>) -> MelSpectrogram {
        MelSpectrogram::new(data, t, AudioConfig { n_mels: m, ..AudioConfig::default() })
    }

    #[test]
    fn mel_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = mel(3, 4, data.clone());
        assert_eq!(mel_loss(&x, &x).unwrap(), 0.0);
        let shifted = mel(3, 4, data.iter().map(|v| v + 1.0).collect());
        assert!((mel_loss(&x, &shifted).unwrap() - 1.0).abs() < 1e-6);
        let other = mel(3, 4, (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect());
        // Double loop over frames and bands.
        let mut s = 0.0;
        for t in 0..3 {
            for k in 0..4 {
                let d = f64::from(x.frame(t)[k]) - f64::from(other.frame(t)[k]);
                s += d * d;
            }
        }
        assert!((mel_loss(&x, &other).unwrap() - s / 12.0).abs() < 1e-12);
        assert!(mel_loss(&x, &mel(4, 3, alloc::vec![0.0; 12])).is_err());
    }

    #[test]
    fn speaker_loss_examples() {
        let s = SpeakerEmbedding { vector: alloc::vec![0.5; 256], source: SpeakerSource::Lookup };
        assert_eq!(speaker_loss(&s, &s).unwrap(), 0.0);
        let mut t = s.clone();
        t.vector[17] += 1.0;
        assert!((speaker_loss(&s, &t).unwrap() - 1.0 / 256.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..256).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..256).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sa = SpeakerEmbedding { vector: a.clone(), source: SpeakerSource::Lookup };
        let sb = SpeakerEmbedding { vector: b.clone(), source: SpeakerSource::Predicted };
        assert!((speaker_loss(&sa, &sb).unwrap() - naive_mse(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn kl_identity_and_unit_shift() {
        let q = DiagonalGaussian { mu: alloc::vec![0.3, -1.0], log_var: alloc::vec![0.2, -0.7] };
        assert_eq!(kl_diag(&q, &q).unwrap(), 0.0);
        let n01 = DiagonalGaussian::standard(1);
        let n11 = DiagonalGaussian { mu: alloc::vec![1.0], log_var: alloc::vec![0.0] };
        assert!((kl_diag(&n01, &n11).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_diag(&n01, &q).is_err());
    }

    #[test]
    fn prosody_loss_examples() {
        let t = ProsodyTargets {
            durations: alloc::vec![1, 1],
            pitch: alloc::vec![0.2, -0.1],
            energy: alloc::vec![1.0, 0.0],
        };
        let exact = ProsodyPrediction {
            log_durations: alloc::vec![0.0, 0.0],
            pitch: t.pitch.clone(),
            energy: t.energy.clone(),
        };
        assert_eq!(prosody_losses(&exact, &t).unwrap(), (0.0, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = ProsodyTargets {
            durations: (0..7).map(|_| rng.gen_range(1..9)).collect(),
            pitch: (0..7).map(|_| StandardNormal.sample(&mut rng)).collect(),
            energy: (0..7).map(|_| StandardNormal.sample(&mut rng)).collect(),
        };
        let pred = ProsodyPrediction {
            log_durations: (0..7).map(|_| StandardNormal.sample(&mut rng)).collect(),
            pitch: (0..7).map(|_| StandardNormal.sample(&mut rng)).collect(),
            energy: (0..7).map(|_| StandardNormal.sample(&mut rng)).collect(),
        };
        let (d, p, e) = prosody_losses(&pred, &t).unwrap();
        let logs: Vec<f64> = t.durations.iter().map(|&d| (d as f64).ln()).collect();
        assert!((d - naive_mse(&pred.log_durations, &logs)).abs() < 1e-12);
        assert!((p - naive_mse(&pred.pitch, &t.pitch)).abs() < 1e-12);
        assert!((e - naive_mse(&pred.energy, &t.energy)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let zero = total_loss(LossParts::default(), LossWeights::default()).unwrap();
        assert_eq!(zero.total, 0.0);
        let parts = LossParts { mel: 1.0, spk: 1.0, kl: 1.0, ..LossParts::default() };
        let b = total_loss(parts, LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.0005 }).unwrap();
        assert!((b.total - 2.0005).abs() < 1e-15);
        let parts = LossParts { mel: 0.7, spk: 0.2, kl: 55.0, duration: 0.1, pitch: 0.3, energy: 0.4 };
        let g0 = total_loss(parts, LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.0 }).unwrap();
        assert_eq!(g0.total, 0.7 + 0.2 + 0.1 + 0.3 + 0.4);
        // Linear in each weight: doubling γ adds exactly γ·kl once more.
        let g1 = total_loss(parts, LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.01 }).unwrap();
        let g2 = total_loss(parts, LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.02 }).unwrap();
        assert!(((g2.total - g1.total) - (g1.total - g0.total)).abs() < 1e-12);
        let bad = LossParts { pitch: f64::NAN, ..LossParts::default() };
        assert!(matches!(total_loss(bad, LossWeights::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn graph_losses_agree_with_value_losses_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let store = ParamStore::new();
        let gc = GradCheckConfig::default();
        let l = 3;
        let d = 4;
        for _ in 0..5 {
            let q_mu = standard_normal(l, d, &mut rng);
            let q_lv = standard_normal(l, d, &mut rng);
            let p_mu = standard_normal(l, d, &mut rng);
            let p_lv = standard_normal(l, d, &mut rng);
            let to_g = |mu: &Tensor, lv: &Tensor| -> Vec<DiagonalGaussian> {
                (0..l).map(|r| DiagonalGaussian { mu: mu.row(r).to_vec(), log_var: lv.row(r).to_vec() }).collect()
            };
            let expected = kl_sequence(&to_g(&q_mu, &q_lv), &to_g(&p_mu, &p_lv)).unwrap();
            // Pack all four into one input so a single check covers every argument.
            let mut packed = Tensor::zeros(l, 4 * d);
            for r in 0..l {
                for (k, t) in [&q_mu, &q_lv, &p_mu, &p_lv].iter().enumerate() {
                    packed.row_mut(r)[k * d..(k + 1) * d].copy_from_slice(t.row(r));
                }
            }
            let f = |tape: &mut Tape<'_>, x: Var| {
                let q = GaussianVars { mu: tape.slice_cols(x, 0, d), log_var: tape.slice_cols(x, d, 2 * d) };
                let p =
                    GaussianVars { mu: tape.slice_cols(x, 2 * d, 3 * d), log_var: tape.slice_cols(x, 3 * d, 4 * d) };
                kl_graph(tape, q, p)
            };
            let mut tape = Tape::new(&store);
            let x = tape.input(packed.clone());
            let k = f(&mut tape, x);
            assert!((tape.value(k).item() - expected).abs() < 1e-12);
            let r = check_input_gradient(&store, &packed, f, &gc, &mut rng);
            assert!(r.max_rel_error < 1e-4, "{r:?}");

            let targets = ProsodyTargets {
                durations: (0..l).map(|_| rng.gen_range(1..6)).collect(),
                pitch: (0..l).map(|_| StandardNormal.sample(&mut rng)).collect(),
                energy: (0..l).map(|_| StandardNormal.sample(&mut rng)).collect(),
            };
            let pred = standard_normal(l, 3, &mut rng);
            let r = check_input_gradient(
                &store,
                &pred,
                |tape, x| {
                    let (a, b, c) = prosody_graph(tape, x, &targets);
                    let ab = tape.add(a, b);
                    tape.add(ab, c)
                },
                &gc,
                &mut rng,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
            let other = standard_normal(l, 3, &mut rng);
            let r = check_input_gradient(
                &store,
                &pred,
                |tape, x| {
                    let o = tape.input(other.clone());
                    mse_graph(tape, x, o)
                },
                &gc,
                &mut rng,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    /// `E_q[log q(z) − log p(z)]` over `n` draws: (mean, standard error).
    fn monte_carlo_kl(q: &DiagonalGaussian, p: &DiagonalGaussian, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let sd = q.std_dev();
        let mut z = alloc::vec![0.0; q.dim()];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            for i in 0..z.len() {
                let e: f64 = StandardNormal.sample(rng);
                z[i] = q.mu[i] + sd[i] * e;
            }
            let r = q.log_density(&z) - p.log_density(&z);
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        (mean, ((s2 / n as f64 - mean * mean) / n as f64).sqrt())
    }

    fn random_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> DiagonalGaussian {
        DiagonalGaussian {
            mu: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            log_var: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn kl_unit_shift_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let q = DiagonalGaussian::standard(1);
        let p = DiagonalGaussian { mu: alloc::vec![1.0], log_var: alloc::vec![0.0] };
        let (mc, _) = monte_carlo_kl(&q, &p, 1_000_000, &mut rng);
        assert!((mc / 0.5 - 1.0).abs() < 0.02, "{mc}");
    }

    #[test]
    fn kl_matches_monte_carlo_across_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for dim in [1, 4, 16, 64] {
            for _ in 0..3 {
                let q = random_gaussian(dim, &mut rng);
                let p = random_gaussian(dim, &mut rng);
                let exact = kl_diag(&q, &p).unwrap();
                let (mc, se) = monte_carlo_kl(&q, &p, 40_000, &mut rng);
                assert!((mc - exact).abs() < 4.0 * se, "dim {dim}: {exact} vs {mc} ± {se}");
            }
        }
    }

    #[test]
    fn elbo_estimate_is_consistent_with_the_loss_terms() {
        use crate::model::Model;
        let mut cfg = crate::config::ModelConfig {
            n_mels: 6,
            vocab_size: 5,
            n_speakers: 2,
            d_x: 4,
            d_c: 4,
            d_z: 2,
            d_s: 3,
            mlp_hidden: 5,
            d_model: 4,
            d_ff: 4,
            encoder_blocks: 1,
            decoder_blocks: 1,
            conv_channels: 4,
            conv_layers: 1,
            conv_kernel: 3,
            variance_hidden: 4,
            pitch_bins: 4,
            energy_bins: 4,
            ..Default::default()
        };
        cfg.speaker_init_std = 0.5;
        let model = Model::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mel = MelSpectrogram::from_tensor(&standard_normal(5, 6, &mut rng), model.audio_config());
        let targets = ProsodyTargets {
            durations: alloc::vec![2, 3],
            pitch: alloc::vec![0.1, 0.2],
            energy: alloc::vec![0.0, 0.3],
        };
        let ex = model.example(&mel, &crate::datamodel::PhonemeSequence::new(alloc::vec![1, 4]), &targets, 1).unwrap();
        let est = elbo_oracle(&model, &ex, 20_000, &mut rng).unwrap();
        let kl_sum = est.closed_form_kl * est.n_positions as f64;
        assert!((est.kl_estimate - kl_sum).abs() < 4.0 * est.kl_std_error + 1e-12);
        let gap = -est.elbo - est.loss_equivalent();
        assert!(gap.abs() < 4.0 * est.kl_std_error + 1e-9, "gap {gap} se {}", est.kl_std_error);
    }

    #[test]
    fn collapsed_posterior_gives_a_near_deterministic_estimate() {
        let q = DiagonalGaussian { mu: alloc::vec![0.3; 4], log_var: alloc::vec![-8.0; 4] };
        let p = DiagonalGaussian::standard(4);
        let mut spread = alloc::vec::Vec::new();
        for seed in 0..4 {
            let (mc, _) = monte_carlo_kl(&q, &p, 10_000, &mut ChaCha8Rng::seed_from_u64(seed));
            spread.push(mc);
        }
        let lo = spread.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = spread.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // The log-ratio's spread is far below its magnitude.
        assert!(hi - lo < 0.01 * kl_diag(&q, &p).unwrap(), "{lo}..{hi}");
    }

    proptest::proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_only_on_equality(seed in proptest::prelude::any::<u64>(), dim in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_gaussian(dim, &mut rng);
            let p = random_gaussian(dim, &mut rng);
            let k = kl_diag(&q, &p).unwrap();
            proptest::prop_assert!(k > 0.0);
            proptest::prop_assert_eq!(kl_diag(&q, &q).unwrap(), 0.0);
            proptest::prop_assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        }
    }
}
