//! Central finite-difference verification of tape gradients.
//!
//! Checks compare the analytic directional derivative `⟨∇f, d⟩` against
//! `(f(θ + h·d) − f(θ − h·d)) / 2h` along random Gaussian directions `d`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::params::{ParamGrads, ParamGroup, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub directions: usize,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, directions: 3, abs_floor: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > self.max_rel_error || rel.is_nan() {
            self.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
        }
        self.checks += 1;
        self.analytic.push(analytic);
        self.numeric.push(numeric);
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checks += other.checks;
        self.analytic.extend(other.analytic);
        self.numeric.extend(other.numeric);
    }
}

fn gaussian_like<R: Rng + ?Sized>(t: &Tensor, rng: &mut R) -> Tensor {
    Tensor::from_vec(t.rows, t.cols, (0..t.len()).map(|_| StandardNormal.sample(rng)).collect())
}

fn scalar_of<F>(store: &ParamStore, f: &F) -> f64
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape);
    let v = tape.value(out);
    assert_eq!(v.len(), 1, "gradient checks need a scalar output");
    v.item()
}

/// Checks parameter gradients of a scalar-valued `f`.
///
/// When `groups` is given, directions are zero outside those groups.
pub fn check_param_gradient<F, R>(
    store: &ParamStore,
    f: F,
    groups: Option<&[ParamGroup]>,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&mut Tape<'_>) -> Var,
    R: Rng + ?Sized,
{
    let mut grads = store.zeros_like();
    {
        let mut tape = Tape::new(store);
        let out = f(&mut tape);
        tape.backward(out, &mut grads);
    }
    let mut report = GradCheckReport::default();
    for _ in 0..cfg.directions {
        let mut dir = ParamGrads { grads: store.entries().iter().map(|e| gaussian_like(&e.value, rng)).collect() };
        if let Some(groups) = groups {
            for (e, d) in store.entries().iter().zip(dir.grads.iter_mut()) {
                if !groups.contains(&e.group) {
                    d.fill(0.0);
                }
            }
        }
        let analytic = grads.dot(&dir);
        let mut plus = store.clone();
        plus.axpy(cfg.step, &dir);
        let mut minus = store.clone();
        minus.axpy(-cfg.step, &dir);
        let numeric = (scalar_of(&plus, &f) - scalar_of(&minus, &f)) / (2.0 * cfg.step);
        report.record(analytic, numeric, cfg.abs_floor);
    }
    report
}

/// Checks the gradient of a scalar-valued `f(x)` w.r.t. its tensor input.
pub fn check_input_gradient<F, R>(
    store: &ParamStore,
    x: &Tensor,
    f: F,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&mut Tape<'_>, Var) -> Var,
    R: Rng + ?Sized,
{
    let eval = |input: &Tensor| {
        let mut tape = Tape::new(store);
        let xv = tape.input(input.clone());
        let out = f(&mut tape, xv);
        tape.value(out).item()
    };
    let analytic_grad = {
        let mut tape = Tape::new(store);
        let xv = tape.input(x.clone());
        let out = f(&mut tape, xv);
        let mut scratch = store.zeros_like();
        let node_grads = tape.backward(out, &mut scratch);
        node_grads.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.rows, x.cols))
    };
    let mut report = GradCheckReport::default();
    for _ in 0..cfg.directions {
        let dir = gaussian_like(x, rng);
        let analytic: f64 = analytic_grad.data.iter().zip(&dir.data).map(|(a, b)| a * b).sum();
        let shifted = |sign: f64| {
            Tensor::from_vec(
                x.rows,
                x.cols,
                x.data.iter().zip(&dir.data).map(|(v, d)| v + sign * cfg.step * d).collect(),
            )
        };
        let numeric = (eval(&shifted(1.0)) - eval(&shifted(-1.0))) / (2.0 * cfg.step);
        report.record(analytic, numeric, cfg.abs_floor);
    }
    report
}

/// Reduces a non-scalar output to `Σ w ⊙ out` with fixed random weights so
/// that every output entry contributes to the check.
pub fn random_projection(tape: &mut Tape<'_>, out: Var, weights: &Tensor) -> Var {
    let w = tape.input(weights.clone());
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

/// Fixed random weights shaped like `shape`, for [`random_projection`].
pub fn projection_weights<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    gaussian_like(&Tensor::zeros(rows, cols), rng)
}
