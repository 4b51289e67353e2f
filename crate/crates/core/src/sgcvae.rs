//! Speaker-guided conditional VAE: recognition network `q(Z | X, C)`, prior
//! network `p(Z | C, S)`, reparameterised sampling, and the speaker predictor
//! `Ŝ = MLP_S(Z)`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::config::{AblationFlags, ModelConfig};
use crate::datamodel::{DiagonalGaussian, LatentSequence, LatentSource, SpeakerEmbedding, SpeakerSource};
use crate::encoders::{ContentSequence, RefVector};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

/// Per-position Gaussian parameters as tape variables, each `L × D_z`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_var: Var,
}

impl GaussianVars {
    /// Reads the per-position distributions off the tape.
    pub fn to_gaussians(&self, tape: &Tape<'_>) -> Vec<DiagonalGaussian> {
        let (mu, lv) = (tape.value(self.mu), tape.value(self.log_var));
        (0..mu.rows).map(|r| DiagonalGaussian { mu: mu.row(r).to_vec(), log_var: lv.row(r).to_vec() }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgcvae {
    pub recognition: Mlp,
    pub prior: Mlp,
    pub speaker_predictor: Mlp,
    pub content_projection: Linear,
    pub flags: AblationFlags,
    d_x: usize,
    d_c: usize,
    d_z: usize,
    d_s: usize,
    log_var_bounds: (f64, f64),
}

impl Sgcvae {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.mlp_hidden;
        let recognition = Mlp::new(
            store,
            "sgcvae.recognition",
            ParamGroup::Recognition,
            &[cfg.d_x + cfg.d_c, h, h, 2 * cfg.d_z],
            rng,
        );
        let prior = Mlp::new(store, "sgcvae.prior", ParamGroup::Prior, &[cfg.d_c + cfg.d_s, h, h, 2 * cfg.d_z], rng);
        let speaker_predictor =
            Mlp::new(store, "sgcvae.speaker_predictor", ParamGroup::SpeakerPredictor, &[cfg.d_z, h, cfg.d_s], rng);
        // Ŝ starts at zero so the speaker loss enters training at the scale of |S|².
        store.get_mut(speaker_predictor.output_layer().weight).fill(0.0);
        let content_projection = Linear::new(
            store,
            "sgcvae.content_projection",
            ParamGroup::ContentProjection,
            cfg.d_c,
            cfg.d_z,
            false,
            rng,
        );
        Self {
            recognition,
            prior,
            speaker_predictor,
            content_projection,
            flags: cfg.flags,
            d_x: cfg.d_x,
            d_c: cfg.d_c,
            d_z: cfg.d_z,
            d_s: cfg.d_s,
            log_var_bounds: (cfg.log_var_min, cfg.log_var_max),
        }
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    fn gaussian_head(&self, tape: &mut Tape<'_>, mlp: &Mlp, input: Var) -> GaussianVars {
        let out = mlp.forward(tape, input);
        let mu = tape.slice_cols(out, 0, self.d_z);
        let raw = tape.slice_cols(out, self.d_z, 2 * self.d_z);
        let log_var = tape.clamp(raw, self.log_var_bounds.0, self.log_var_bounds.1);
        GaussianVars { mu, log_var }
    }

    /// `q(Z | X, C)`: the MLP over `[x, c_t]` at each position, `x` broadcast.
    pub fn recognition(&self, tape: &mut Tape<'_>, x: Var, c: Var) -> Result<GaussianVars> {
        let (xs, cs) = (tape.shape(x), tape.shape(c));
        if xs != (1, self.d_x) || cs.1 != self.d_c {
            return Err(Error::Shape(alloc::format!(
                "recognition expects x 1x{} and c Lx{}, got {xs:?} and {cs:?}",
                self.d_x,
                self.d_c
            )));
        }
        let xb = tape.broadcast_rows(x, cs.0);
        let input = tape.concat_cols(&[xb, c]);
        Ok(self.gaussian_head(tape, &self.recognition, input))
    }

    /// `p(Z | C, S)`: the MLP over `[c_t, s]` at each position, `s` broadcast.
    pub fn prior(&self, tape: &mut Tape<'_>, c: Var, s: Var) -> Result<GaussianVars> {
        let (cs, ss) = (tape.shape(c), tape.shape(s));
        if ss != (1, self.d_s) || cs.1 != self.d_c {
            return Err(Error::Shape(alloc::format!(
                "prior expects c Lx{} and s 1x{}, got {cs:?} and {ss:?}",
                self.d_c,
                self.d_s
            )));
        }
        let sb = tape.broadcast_rows(s, cs.0);
        let input = tape.concat_cols(&[c, sb]);
        Ok(self.gaussian_head(tape, &self.prior, input))
    }

    /// `z = μ + exp(½ log σ²) ⊙ ε`.
    pub fn reparameterize(&self, tape: &mut Tape<'_>, g: GaussianVars, eps: &Tensor) -> Result<Var> {
        if tape.shape(g.mu) != eps.shape() {
            return Err(Error::Shape(alloc::format!("eps {:?} does not match mu {:?}", eps.shape(), tape.shape(g.mu))));
        }
        let half = tape.scale(g.log_var, 0.5);
        let sigma = tape.exp(half);
        let e = tape.input(eps.clone());
        let noise = tape.mul(sigma, e);
        Ok(tape.add(g.mu, noise))
    }

    /// Temporal mean-pool of `z`, then the predictor MLP. `1 × D_s`.
    pub fn predict_speaker(&self, tape: &mut Tape<'_>, z: Var) -> Var {
        let pooled = tape.mean_rows(z);
        self.speaker_predictor.forward(tape, pooled)
    }

    /// Decoder input: `z` by default, `z + proj(c)` for the standard-CVAE ablation.
    pub fn latent_for_decoder(&self, tape: &mut Tape<'_>, z: Var, c: Var) -> Var {
        if self.flags.standard_cvae_content_add {
            let proj = self.content_projection.forward(tape, c);
            tape.add(z, proj)
        } else {
            z
        }
    }

    pub fn recognition_values(
        &self,
        params: &ParamStore,
        x: &RefVector,
        c: &ContentSequence,
    ) -> Result<Vec<DiagonalGaussian>> {
        let mut tape = Tape::new(params);
        let xv = tape.input(x.to_row());
        let cv = tape.input(c.c.clone());
        let g = self.recognition(&mut tape, xv, cv)?;
        Ok(g.to_gaussians(&tape))
    }

    pub fn prior_values(
        &self,
        params: &ParamStore,
        c: &ContentSequence,
        s: &SpeakerEmbedding,
    ) -> Result<Vec<DiagonalGaussian>> {
        let mut tape = Tape::new(params);
        let cv = tape.input(c.c.clone());
        let sv = tape.input(s.to_row());
        let g = self.prior(&mut tape, cv, sv)?;
        Ok(g.to_gaussians(&tape))
    }

    pub fn predict_speaker_value(&self, params: &ParamStore, z: &LatentSequence) -> SpeakerEmbedding {
        let mut tape = Tape::new(params);
        let zv = tape.input(z.z.clone());
        let s = self.predict_speaker(&mut tape, zv);
        SpeakerEmbedding { vector: tape.value(s).data.clone(), source: SpeakerSource::Predicted }
    }

    pub fn latent_for_decoder_value(&self, params: &ParamStore, z: &LatentSequence, c: &ContentSequence) -> Tensor {
        let mut tape = Tape::new(params);
        let zv = tape.input(z.z.clone());
        let cv = tape.input(c.c.clone());
        let out = self.latent_for_decoder(&mut tape, zv, cv);
        tape.value(out).clone()
    }
}

/// Draws `ε ~ N(0, I)` of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

/// Value-level reparameterisation of a Gaussian sequence. With `eps = None`
/// fresh noise is drawn from `rng`.
pub fn reparameterize<R: Rng + ?Sized>(
    gaussians: &[DiagonalGaussian],
    eps: Option<Tensor>,
    source: LatentSource,
    rng: &mut R,
) -> Result<LatentSequence> {
    let rows = gaussians.len();
    let cols = gaussians.first().map_or(0, DiagonalGaussian::dim);
    if gaussians.iter().any(|g| g.dim() != cols || g.log_var.len() != cols) {
        return Err(Error::Shape("ragged gaussian sequence".into()));
    }
    let eps = match eps {
        Some(e) if e.shape() != (rows, cols) => {
            return Err(Error::Shape(alloc::format!("eps {:?} does not match {rows}x{cols}", e.shape())))
        }
        Some(e) => e,
        None => standard_normal(rows, cols, rng),
    };
    let mut z = Tensor::zeros(rows, cols);
    for (r, g) in gaussians.iter().enumerate() {
        for c in 0..cols {
            z.data[r * cols + c] = g.mu[c] + libm::exp(0.5 * g.log_var[c]) * eps.get(r, c);
        }
    }
    Ok(LatentSequence { z, eps, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_param_gradient, projection_weights, random_projection, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig { d_x: 5, d_c: 4, d_z: 3, d_s: 6, mlp_hidden: 7, ..ModelConfig::default() }
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn shapes_and_zero_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let net = Sgcvae::new(&mut store, &cfg, &mut rng);
        let x = RefVector { x: alloc::vec![0.3; 5] };
        let c = ContentSequence { c: standard_normal(3, 4, &mut rng) };
        let s = SpeakerEmbedding { vector: alloc::vec![0.1; 6], source: SpeakerSource::Lookup };
        let q = net.recognition_values(&store, &x, &c).unwrap();
        assert_eq!(q.len(), 3);
        assert!(q.iter().all(|g| g.dim() == 3));
        let p = net.prior_values(&store, &c, &s).unwrap();
        assert_eq!(p.len(), 3);

        zero_all(&mut store);
        let q = net.recognition_values(&store, &x, &c).unwrap();
        assert!(q.iter().all(|g| g == &DiagonalGaussian::standard(3)));
        let c1 = ContentSequence { c: standard_normal(1, 4, &mut rng) };
        assert_eq!(net.prior_values(&store, &c1, &s).unwrap(), alloc::vec![DiagonalGaussian::standard(3)]);
        let z = reparameterize(&q, None, LatentSource::Recognition, &mut rng).unwrap();
        assert!(net.predict_speaker_value(&store, &z).vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let net = Sgcvae::new(&mut store, &small_cfg(), &mut rng);
        let x = RefVector { x: alloc::vec![0.0; 4] };
        let c = ContentSequence { c: Tensor::zeros(2, 4) };
        assert!(matches!(net.recognition_values(&store, &x, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn log_variance_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let net = Sgcvae::new(&mut store, &cfg, &mut rng);
        // Large weights push pre-clamp log-variances far outside the bounds.
        for id in store.group_ids(ParamGroup::Recognition).collect::<Vec<_>>() {
            store.get_mut(id).data.iter_mut().for_each(|v| *v *= 40.0);
        }
        for _ in 0..50 {
            let x = RefVector { x: standard_normal(1, 5, &mut rng).data.iter().map(|v| v * 10.0).collect() };
            let c = ContentSequence { c: standard_normal(4, 4, &mut rng) };
            for g in net.recognition_values(&store, &x, &c).unwrap() {
                assert!(g.log_var.iter().all(|&v| (-8.0..=8.0).contains(&v)));
            }
        }
    }

    #[test]
    fn zero_noise_gives_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = alloc::vec![DiagonalGaussian { mu: alloc::vec![1.5, -2.0], log_var: alloc::vec![0.3, -1.0] }];
        let z = reparameterize(&g, Some(Tensor::zeros(1, 2)), LatentSource::Recognition, &mut rng).unwrap();
        assert_eq!(z.z.data, alloc::vec![1.5, -2.0]);
        assert!(reparameterize(&g, Some(Tensor::zeros(2, 2)), LatentSource::Recognition, &mut rng).is_err());
    }

    #[test]
    fn recognition_broadcast_matches_per_position_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let net = Sgcvae::new(&mut store, &small_cfg(), &mut rng);
        let x = RefVector { x: standard_normal(1, 5, &mut rng).data };
        let c = standard_normal(4, 4, &mut rng);
        let all = net.recognition_values(&store, &x, &ContentSequence { c: c.clone() }).unwrap();
        for t in 0..4 {
            let ct = Tensor::from_vec(1, 4, c.row(t).to_vec());
            let single = net.recognition_values(&store, &x, &ContentSequence { c: ct }).unwrap();
            assert_eq!(single[0], all[t]);
        }
    }

    #[test]
    fn speaker_prediction_is_invariant_to_repeating_a_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let net = Sgcvae::new(&mut store, &small_cfg(), &mut rng);
        // Give the zero-initialised output layer some weight.
        let out = net.speaker_predictor.output_layer().weight;
        store.get_mut(out).data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.3).sin());
        let row = standard_normal(1, 3, &mut rng);
        let one = LatentSequence { z: row.clone(), eps: Tensor::zeros(1, 3), source: LatentSource::Recognition };
        let mut rep = Tensor::zeros(5, 3);
        for r in 0..5 {
            rep.row_mut(r).copy_from_slice(&row.data);
        }
        let five = LatentSequence { z: rep, eps: Tensor::zeros(5, 3), source: LatentSource::Recognition };
        let a = net.predict_speaker_value(&store, &one);
        let b = net.predict_speaker_value(&store, &five);
        for (u, v) in a.vector.iter().zip(&b.vector) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(a.vector.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn content_add_ablation_changes_only_the_decoder_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let plain = Sgcvae::new(&mut store, &cfg, &mut rng);
        let mut ablated = plain.clone();
        ablated.flags.standard_cvae_content_add = true;
        let z = LatentSequence {
            z: standard_normal(3, 3, &mut rng),
            eps: Tensor::zeros(3, 3),
            source: LatentSource::Recognition,
        };
        let c = ContentSequence { c: standard_normal(3, 4, &mut rng) };
        assert_eq!(plain.latent_for_decoder_value(&store, &z, &c), z.z);
        assert_ne!(ablated.latent_for_decoder_value(&store, &z, &c), z.z);
        store.get_mut(plain.content_projection.weight).fill(0.0);
        assert_eq!(ablated.latent_for_decoder_value(&store, &z, &c), z.z);
        // The flag does not touch the recognition or prior paths.
        let x = RefVector { x: standard_normal(1, 5, &mut rng).data };
        assert_eq!(
            plain.recognition_values(&store, &x, &c).unwrap(),
            ablated.recognition_values(&store, &x, &c).unwrap()
        );
    }

    #[test]
    fn sgcvae_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut cfg = small_cfg();
        cfg.flags.standard_cvae_content_add = true;
        let gc = GradCheckConfig::default();
        for _ in 0..5 {
            let mut store = ParamStore::new();
            let net = Sgcvae::new(&mut store, &cfg, &mut rng);
            let out = net.speaker_predictor.output_layer().weight;
            let w = standard_normal(store.get(out).rows, store.get(out).cols, &mut rng);
            *store.get_mut(out) = w;
            let x = standard_normal(1, 5, &mut rng);
            let c = standard_normal(3, 4, &mut rng);
            let s = standard_normal(1, 6, &mut rng);
            let eps = standard_normal(3, 3, &mut rng);
            let w1 = projection_weights(3, 3, &mut rng);
            let w2 = projection_weights(1, 6, &mut rng);
            let r = check_param_gradient(
                &store,
                |tape| {
                    let (xv, cv, sv) = (tape.input(x.clone()), tape.input(c.clone()), tape.input(s.clone()));
                    let q = net.recognition(tape, xv, cv).unwrap();
                    let p = net.prior(tape, cv, sv).unwrap();
                    let z = net.reparameterize(tape, q, &eps).unwrap();
                    let zin = net.latent_for_decoder(tape, z, cv);
                    let shat = net.predict_speaker(tape, z);
                    let a = random_projection(tape, zin, &w1);
                    let b = random_projection(tape, shat, &w2);
                    let pm = random_projection(tape, p.mu, &w1);
                    let pl = random_projection(tape, p.log_var, &w1);
                    let ab = tape.add(a, b);
                    let pp = tape.add(pm, pl);
                    tape.add(ab, pp)
                },
                None,
                &gc,
                &mut rng,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn sample_moments_match_the_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = DiagonalGaussian { mu: alloc::vec![0.7, -1.2], log_var: alloc::vec![0.4, -2.0] };
        let n = 200_000;
        let seq: Vec<DiagonalGaussian> = core::iter::repeat(g.clone()).take(n).collect();
        let z = reparameterize(&seq, None, LatentSource::Recognition, &mut rng).unwrap();
        for d in 0..2 {
            let col: Vec<f64> = (0..n).map(|r| z.z.get(r, d)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (g.variance()[d] / n as f64).sqrt();
            assert!((mean - g.mu[d]).abs() < 4.0 * se, "{mean}");
            assert!((var / g.variance()[d] - 1.0).abs() < 0.02, "{var}");
        }
    }

    /// `E[∂f(μ + σε)/∂μ]` from the tape against a central difference of the
    /// sample mean of `f`, with the same draws on both sides.
    #[test]
    fn pathwise_gradient_matches_finite_difference_of_the_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut store = ParamStore::new();
        let net = Sgcvae::new(&mut store, &small_cfg(), &mut rng);
        let n = 100_000;
        let d = 3;
        let eps = standard_normal(n, d, &mut rng);
        let log_var = Tensor::from_vec(1, d, alloc::vec![0.2, -0.5, 1.0]);
        let w = Tensor::from_vec(1, d, alloc::vec![0.8, -1.3, 0.4]);
        let objective = |tape: &mut Tape<'_>, mu_row: Var| {
            let mu = tape.broadcast_rows(mu_row, n);
            let lv_row = tape.input(log_var.clone());
            let lv = tape.broadcast_rows(lv_row, n);
            let z = net.reparameterize(tape, GaussianVars { mu, log_var: lv }, &eps).unwrap();
            let wv = tape.input(w.clone());
            let scaled = tape.mul_row(z, wv);
            let t = tape.tanh(scaled);
            let s = tape.sum(t);
            tape.scale(s, 1.0 / n as f64)
        };
        let mu0 = Tensor::from_vec(1, d, alloc::vec![0.1, 0.5, -0.3]);
        let mut tape = Tape::new(&store);
        let mu_var = tape.input(mu0.clone());
        let f = objective(&mut tape, mu_var);
        let mut sink = store.zeros_like();
        let analytic = tape.backward(f, &mut sink).wrt(mu_var).unwrap().clone();
        let h = 1e-4;
        for k in 0..d {
            let eval = |delta: f64| {
                let mut m = mu0.clone();
                m.data[k] += delta;
                let mut tape = Tape::new(&store);
                let v = tape.input(m);
                let out = objective(&mut tape, v);
                tape.value(out).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (numeric - analytic.data[k]).abs() < 1e-6 * (1.0 + numeric.abs()),
                "{numeric} vs {}",
                analytic.data[k]
            );
        }
    }
}
