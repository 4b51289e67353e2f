//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied; [`Tape::backward`]
//! accumulates their gradients into a [`ParamGrads`] buffer and returns the
//! gradients of every recorded node.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Value,
    op: Op,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(512), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Parameters read by this tape so far.
    pub fn touched_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.param_vars.iter().enumerate().filter_map(|(i, v)| v.map(|_| ParamId(i)))
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul shape mismatch {:?} x {:?}", av.shape(), bv.shape());
        let (m, n) = (av.rows, bv.cols);
        let mut out = Tensor::zeros(m, n);
        gemm(1.0, av, false, bv, false, 0.0, &mut out.data, m, n);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_t shape mismatch {:?} x {:?}ᵀ", av.shape(), bv.shape());
        let (m, n) = (av.rows, bv.rows);
        let mut out = Tensor::zeros(m, n);
        gemm(1.0, av, false, bv, true, 0.0, &mut out.data, m, n);
        self.push(out, Op::MatMulT(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        Tensor::from_vec(av.rows, av.cols, av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    fn row_op(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, rv) = (self.value(a), self.value(row));
        assert!(rv.rows == 1 && rv.cols == av.cols, "row broadcast shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&rv.data) {
                *o = f(*o, b);
            }
        }
        out
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.row_op(a, row, |x, y| x + y);
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.row_op(a, row, |x, y| x * y);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Elementwise clamp; the gradient is zero wherever the input lies
    /// outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - max);
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let n = out.cols as f64;
        let mut inv_std = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / libm::sqrt(var + eps);
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
                offset += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(av.rows, end - start);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(idx.len(), av.cols);
        for (i, &src) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(av.row(src));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Repeats a `1 × n` row `n_rows` times.
    pub fn broadcast_rows(&mut self, a: Var, n_rows: usize) -> Var {
        debug_assert_eq!(self.value(a).rows, 1);
        self.gather_rows(a, vec![0; n_rows])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(av.sum() / av.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Back-propagates from `root` seeded with ones and accumulates
    /// parameter gradients into `param_grads`.
    pub fn backward(&self, root: Var, param_grads: &mut ParamGrads) -> NodeGrads {
        let (r, c) = self.shape(root);
        let mut seed = Tensor::zeros(r, c);
        seed.fill(1.0);
        self.backward_with(root, seed, param_grads)
    }

    /// Back-propagates a caller-supplied output gradient from `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor, param_grads: &mut ParamGrads) -> NodeGrads {
        assert_eq!(seed.shape(), self.shape(root), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    gemm(1.0, &g, false, bv, true, 0.0, &mut da.data, av.rows, av.cols);
                    self.deliver(&mut grads, param_grads, *a, da);
                    if let Some(id) = self.param_of(*b) {
                        // Weight gradients go straight into the parameter buffer.
                        gemm(1.0, av, true, &g, false, 1.0, &mut param_grads.get_mut(id).data, bv.rows, bv.cols);
                    } else {
                        let mut db = Tensor::zeros(bv.rows, bv.cols);
                        gemm(1.0, av, true, &g, false, 0.0, &mut db.data, bv.rows, bv.cols);
                        self.deliver(&mut grads, param_grads, *b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    gemm(1.0, &g, false, bv, false, 0.0, &mut da.data, av.rows, av.cols);
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    gemm(1.0, &g, true, av, false, 0.0, &mut db.data, bv.rows, bv.cols);
                    self.deliver(&mut grads, param_grads, *a, da);
                    self.deliver(&mut grads, param_grads, *b, db);
                }
                Op::Add(a, b) => {
                    self.deliver(&mut grads, param_grads, *a, g.clone());
                    self.deliver(&mut grads, param_grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.deliver(&mut grads, param_grads, *a, g.clone());
                    self.deliver(&mut grads, param_grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = hadamard(&g, bv);
                    let db = hadamard(&g, av);
                    self.deliver(&mut grads, param_grads, *a, da);
                    self.deliver(&mut grads, param_grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let dr = g.mean_rows().map(|v| v * g.rows as f64);
                    self.deliver(&mut grads, param_grads, *a, g.clone());
                    self.deliver(&mut grads, param_grads, *row, dr);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let mut da = g.clone();
                    let mut dr = Tensor::zeros(1, rv.cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let ar = av.row(r);
                        for j in 0..g.cols {
                            dr.data[j] += gr[j] * ar[j];
                        }
                        for (d, &w) in da.row_mut(r).iter_mut().zip(&rv.data) {
                            *d *= w;
                        }
                    }
                    self.deliver(&mut grads, param_grads, *a, da);
                    self.deliver(&mut grads, param_grads, *row, dr);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    self.deliver(&mut grads, param_grads, *a, g.map(|v| v * k));
                }
                Op::AddScalar(a) => self.deliver(&mut grads, param_grads, *a, g.clone()),
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let da = zip(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::Exp(a) => {
                    let y = self.value(Var(i));
                    self.deliver(&mut grads, param_grads, *a, hadamard(&g, y));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let (lo, hi) = (*lo, *hi);
                    let da = zip(&g, x, |gv, xv| if xv >= lo && xv <= hi { gv } else { 0.0 });
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(i));
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = self.value(Var(i));
                    let n = y.cols as f64;
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        let is = inv_std[r];
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = is * (gr[j] - g_mean - yr[j] * gy_mean);
                        }
                    }
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut dp = Tensor::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        self.deliver(&mut grads, param_grads, p, dp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::GatherRows(a, idx) => {
                    let scatter = |da: &mut Tensor| {
                        for (r, &src) in idx.iter().enumerate() {
                            for (d, v) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    };
                    if let Some(id) = self.param_of(*a) {
                        scatter(param_grads.get_mut(id));
                    } else {
                        let av = self.value(*a);
                        let mut da = Tensor::zeros(av.rows, av.cols);
                        scatter(&mut da);
                        self.deliver(&mut grads, param_grads, *a, da);
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows;
                    let scaled = g.map(|v| v / n as f64);
                    let mut da = Tensor::zeros(n, g.cols);
                    for r in 0..n {
                        da.row_mut(r).copy_from_slice(&scaled.data);
                    }
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Tensor::zeros(r, c);
                    da.fill(g.item());
                    self.deliver(&mut grads, param_grads, *a, da);
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Tensor::zeros(r, c);
                    da.fill(g.item() / (r * c) as f64);
                    self.deliver(&mut grads, param_grads, *a, da);
                }
            }
            grads[i] = Some(g);
        }
        NodeGrads { grads }
    }
}

impl Tape<'_> {
    fn param_of(&self, v: Var) -> Option<ParamId> {
        match (&self.nodes[v.0].op, &self.nodes[v.0].value) {
            (Op::Leaf, Value::Param(id)) => Some(*id),
            _ => None,
        }
    }

    /// Adds `g` to the gradient of `v`; parameter leaves accumulate directly
    /// into `param_grads`.
    fn deliver(&self, grads: &mut [Option<Tensor>], param_grads: &mut ParamGrads, v: Var, g: Tensor) {
        match self.param_of(v) {
            Some(id) => param_grads.get_mut(id).add_assign(&g),
            None => accumulate(grads, v, g),
        }
    }
}

/// Gradients of a root with respect to every non-parameter node recorded
/// before it. Parameter gradients are only written to the [`ParamGrads`].
pub struct NodeGrads {
    grads: Vec<Option<Tensor>>,
}

impl NodeGrads {
    /// Gradient w.r.t. `v`, or `None` if `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x * y)
}
