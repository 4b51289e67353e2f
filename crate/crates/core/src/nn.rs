//! Layer building blocks recorded on a [`Tape`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

/// Affine map `x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), group, d_in, d_out, Init::Xavier, rng);
        let bias = bias.then(|| store.register(format!("{name}.bias"), group, 1, d_out, Init::Zeros, rng));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.get(self.weight).cols
    }
}

/// Stack of linear layers with `tanh` between them and a linear output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        h
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("mlp has at least one layer")
    }
}

/// Row-wise layer normalisation with learned gain and bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, group: ParamGroup, d: usize, rng: &mut R) -> Self {
        let gain = store.register(format!("{name}.gain"), group, 1, d, Init::Constant(1.0), rng);
        let bias = store.register(format!("{name}.bias"), group, 1, d, Init::Zeros, rng);
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let n = tape.layer_norm(x, LN_EPS);
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d % heads == 0, "model width must divide evenly into heads");
        Self {
            query: Linear::new(store, &format!("{name}.q"), group, d, d, true, rng),
            key: Linear::new(store, &format!("{name}.k"), group, d, d, true, rng),
            value: Linear::new(store, &format!("{name}.v"), group, d, d, true, rng),
            out: Linear::new(store, &format!("{name}.o"), group, d, d, true, rng),
            heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let d = tape.shape(x).1;
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let q = self.query.forward(tape, x);
        let k = self.key.forward(tape, x);
        let v = self.value.forward(tape, x);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            outs.push(tape.matmul(attn, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.out.forward(tape, cat)
    }
}

/// Post-norm transformer block: self-attention then a two-layer
/// position-wise feed-forward, each with a residual connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FftBlock {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

impl FftBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), group, d, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), group, d, rng),
            ff_in: Linear::new(store, &format!("{name}.ff1"), group, d, d_ff, true, rng),
            ff_out: Linear::new(store, &format!("{name}.ff2"), group, d_ff, d, true, rng),
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), group, d, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let a = self.attn.forward(tape, x);
        let h = tape.add(x, a);
        let h = self.norm1.forward(tape, h);
        let f = self.ff_in.forward(tape, h);
        let f = tape.tanh(f);
        let f = self.ff_out.forward(tape, f);
        let y = tape.add(h, f);
        self.norm2.forward(tape, y)
    }
}

/// 1-D convolution over rows (time) with circular padding, so the output
/// has as many rows as the input and every frame sees a full kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircularConv1d {
    pub linear: Linear,
    pub kernel: usize,
}

impl CircularConv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self { linear: Linear::new(store, name, group, kernel * c_in, c_out, true, rng), kernel }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let t = tape.shape(x).0;
        let half = (self.kernel / 2) as isize;
        let taps: Vec<Var> = (-half..=half)
            .map(|offset| {
                let idx = (0..t as isize).map(|i| (i + offset).rem_euclid(t as isize) as usize).collect();
                tape.gather_rows(x, idx)
            })
            .collect();
        let unfolded = tape.concat_cols(&taps);
        self.linear.forward(tape, unfolded)
    }
}

/// Learned lookup table; row `i` is the vector for symbol `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        n: usize,
        d: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self { table: store.register(format!("{name}.table"), group, n, d, Init::Normal(std), rng) }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Var {
        let table = tape.param(self.table);
        tape.gather_rows(table, ids.to_vec())
    }

    pub fn len(&self, store: &ParamStore) -> usize {
        store.get(self.table).rows
    }
}

/// Standard sinusoidal position signal, `n × d`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut out = Tensor::zeros(n, d);
    for pos in 0..n {
        let row = out.row_mut(pos);
        for i in 0..d {
            let pair = (i / 2) as f64;
            let rate = libm::pow(10000.0, -2.0 * pair / d as f64);
            let angle = pos as f64 * rate;
            row[i] = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
        }
    }
    out
}
