//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! Spike emission is differentiated with the neuron's surrogate derivative.
//! In [`SpikeFn::Hard`] mode the forward uses the Heaviside step (the
//! straight-through estimator); [`SpikeFn::Smooth`] replaces the step by
//! the surrogate's smooth counterpart so finite differences are defined.

mod check;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use check::finite_diff_check;

use crate::attention::Score;
use crate::error::{shape_err, Error, Result};
use crate::neuron::{NeuronConfig, TemporalMode};
use crate::tensor::RealTensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeFn {
    #[default]
    Hard,
    Smooth,
}

#[derive(Clone, Debug)]
struct AttendPlan {
    groups: Arc<Vec<Vec<usize>>>,
    heads: usize,
    scale: f64,
    score: Score,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    cout: usize,
    k: usize,
    groups: usize,
    stride: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Affine(usize, usize, usize),
    Reshape(usize),
    ConcatCols(usize, usize),
    Lif {
        x: usize,
        cfg: NeuronConfig,
        mode: TemporalMode,
        h: Vec<f64>,
    },
    Attend {
        q: usize,
        k: usize,
        v: usize,
        plan: AttendPlan,
    },
    Conv {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    MeanRows(usize),
    CrossEntropy {
        logits: usize,
        label: usize,
        probs: Vec<f64>,
    },
    Sum(usize),
}

#[derive(Clone, Debug)]
struct Node {
    dims: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Records operations in execution order; one tape per forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    spike: SpikeFn,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(SpikeFn::Hard)
    }
}

/// Gradients of a scalar with respect to every recorded value.
#[derive(Clone, Debug)]
pub struct Gradients {
    tape: u64,
    dims: Vec<Vec<usize>>,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient for `v`; values the loss does not depend on get zeros.
    pub fn wrt(&self, v: Var) -> Result<RealTensor> {
        if v.tape != self.tape || v.index >= self.dims.len() {
            return Err(Error::Graph(format!(
                "value {} is not on the differentiated tape",
                v.index
            )));
        }
        let dims = self.dims[v.index].clone();
        let g = &self.grads[v.index];
        if g.is_empty() {
            RealTensor::zeros(dims)
        } else {
            RealTensor::new(dims, g.clone())
        }
    }

    /// Flat gradient for `v` without the finiteness check of [`Self::wrt`].
    pub fn raw(&self, v: Var) -> Result<Vec<f64>> {
        if v.tape != self.tape || v.index >= self.dims.len() {
            return Err(Error::Graph(format!(
                "value {} is not on the differentiated tape",
                v.index
            )));
        }
        let g = &self.grads[v.index];
        Ok(if g.is_empty() {
            vec![0.0; self.dims[v.index].iter().product()]
        } else {
            g.clone()
        })
    }
}

fn rows_cols(dims: &[usize]) -> (usize, usize) {
    let c = *dims.last().unwrap_or(&1);
    (dims.iter().product::<usize>() / c.max(1), c)
}

fn add_into(dst: &mut Vec<f64>, len: usize, src: impl IntoIterator<Item = (usize, f64)>) {
    if dst.is_empty() {
        dst.resize(len, 0.0);
    }
    for (i, g) in src {
        dst[i] += g;
    }
}

fn accumulate(dst: &mut Vec<f64>, src: &[f64]) {
    if dst.is_empty() {
        dst.extend_from_slice(src);
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

fn ensure(dst: &mut Vec<f64>, len: usize) -> &mut [f64] {
    if dst.is_empty() {
        dst.resize(len, 0.0);
    }
    dst
}

impl Tape {
    pub fn new(spike: SpikeFn) -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            spike,
        }
    }

    pub fn spike_fn(&self) -> SpikeFn {
        self.spike
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "value {} was not recorded on this tape",
                v.index
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, dims: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        self.nodes.push(Node { dims, value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, t: &RealTensor) -> Var {
        self.push(t.dims().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn dims(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.nodes[self.idx(v)?].dims)
    }

    pub fn tensor(&self, v: Var) -> Result<RealTensor> {
        let n = &self.nodes[self.idx(v)?];
        RealTensor::new(n.dims.clone(), n.value.clone())
    }

    /// `[R, K] × [K, N]`; `a` may have any rank with `K` as its last axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (r, k) = rows_cols(&self.nodes[ia].dims);
        let &[kb, n] = self.nodes[ib].dims.as_slice() else {
            return Err(shape_err(format!(
                "matmul rhs must be rank 2, got {:?}",
                self.nodes[ib].dims
            )));
        };
        if k != kb {
            return Err(shape_err(format!("matmul inner dims {k} vs {kb}")));
        }
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let mut out = vec![0.0; r * n];
        for i in 0..r {
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &x) in av[i * k..(i + 1) * k].iter().enumerate() {
                if x != 0.0 {
                    for (o, &w) in orow.iter_mut().zip(&bv[kk * n..(kk + 1) * n]) {
                        *o += x * w;
                    }
                }
            }
        }
        let mut dims = self.nodes[ia].dims.clone();
        *dims.last_mut().expect("rank >= 1") = n;
        Ok(self.push(dims, out, Op::MatMul(ia, ib)))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ia].dims != self.nodes[ib].dims {
            return Err(shape_err(format!(
                "{:?} vs {:?}",
                self.nodes[ia].dims, self.nodes[ib].dims
            )));
        }
        Ok((ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape(a, b)?;
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[ia].dims.clone(), out, Op::Add(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape(a, b)?;
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[ia].dims.clone(), out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.iter().map(|x| x * c).collect();
        Ok(self.push(self.nodes[ia].dims.clone(), out, Op::Scale(ia, c)))
    }

    /// Per-channel `x·scale + shift` over the last axis.
    pub fn affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (ix, is, ib) = (self.idx(x)?, self.idx(scale)?, self.idx(shift)?);
        let (_, c) = rows_cols(&self.nodes[ix].dims);
        if self.nodes[is].value.len() != c || self.nodes[ib].value.len() != c {
            return Err(shape_err(format!(
                "affine over {c} channels with {} scales",
                self.nodes[is].value.len()
            )));
        }
        let (s, b) = (&self.nodes[is].value, &self.nodes[ib].value);
        let out = self.nodes[ix]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x * s[i % c] + b[i % c])
            .collect();
        Ok(self.push(self.nodes[ix].dims.clone(), out, Op::Affine(ix, is, ib)))
    }

    pub fn reshape(&mut self, x: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let ix = self.idx(x)?;
        let dims = dims.into();
        if dims.iter().product::<usize>() != self.nodes[ix].value.len() || dims.contains(&0) {
            return Err(shape_err(format!(
                "cannot reshape {:?} to {:?}",
                self.nodes[ix].dims, dims
            )));
        }
        let value = self.nodes[ix].value.clone();
        Ok(self.push(dims, value, Op::Reshape(ix)))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (da, db) = (&self.nodes[ia].dims, &self.nodes[ib].dims);
        if da.len() != db.len() || da[..da.len() - 1] != db[..db.len() - 1] {
            return Err(shape_err(format!("cannot concatenate {da:?} and {db:?}")));
        }
        let ((r, ca), (_, cb)) = (rows_cols(da), rows_cols(db));
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(&self.nodes[ia].value[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.nodes[ib].value[i * cb..(i + 1) * cb]);
        }
        let mut dims = da.clone();
        *dims.last_mut().expect("rank >= 1") = ca + cb;
        Ok(self.push(dims, out, Op::ConcatCols(ia, ib)))
    }

    /// LIF neurons along the leading time axis of `x`, from zero potential.
    pub fn lif(&mut self, x: Var, cfg: &NeuronConfig, mode: TemporalMode) -> Result<Var> {
        let ix = self.idx(x)?;
        let dims = self.nodes[ix].dims.clone();
        if dims.len() < 2 {
            return Err(shape_err(format!("LIF input needs [T, ...], got {dims:?}")));
        }
        let xv = &self.nodes[ix].value;
        let steps = dims[0];
        let width = xv.len() / steps;
        let theta = cfg.threshold();
        let mut u = vec![0.0; width];
        let mut out = vec![0.0; xv.len()];
        let mut h = vec![0.0; xv.len()];
        for t in 0..steps {
            if mode == TemporalMode::ResetEachStep {
                u.iter_mut().for_each(|v| *v = 0.0);
            }
            for (i, ui) in u.iter_mut().enumerate() {
                let j = t * width + i;
                let hj = cfg.beta * *ui + xv[j];
                let s = match self.spike {
                    SpikeFn::Hard => f64::from(u8::from(hj > theta)),
                    SpikeFn::Smooth => cfg.surrogate.step(hj - theta),
                };
                h[j] = hj;
                out[j] = s;
                *ui = hj - theta * s;
            }
        }
        Ok(self.push(
            dims,
            out,
            Op::Lif {
                x: ix,
                cfg: *cfg,
                mode,
                h,
            },
        ))
    }

    /// Multi-head linear-order attention within row groups of `[R, D]`
    /// operands: `scale · f(Q)·(f(K)ᵀV)` where `f(x) = 2x − 1` for the
    /// Hamming score and the identity for the dot score.
    pub fn attend(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: Arc<Vec<Vec<usize>>>,
        heads: usize,
        scale: f64,
        score: Score,
    ) -> Result<Var> {
        let (iq, ik, iv) = (self.idx(q)?, self.idx(k)?, self.idx(v)?);
        let dims = self.nodes[iq].dims.clone();
        if self.nodes[ik].dims != dims || self.nodes[iv].dims != dims || dims.len() != 2 {
            return Err(shape_err(
                "attention operands must share one [R, D] shape".to_string(),
            ));
        }
        let (r, d) = (dims[0], dims[1]);
        if heads == 0 || d % heads != 0 {
            return Err(shape_err(format!("D={d} not divisible by {heads} heads")));
        }
        if groups.iter().flatten().any(|&row| row >= r) {
            return Err(shape_err(format!("attention group row outside {r} rows")));
        }
        let plan = AttendPlan {
            groups,
            heads,
            scale,
            score,
        };
        let out = attend_forward(
            &self.nodes[iq].value,
            &self.nodes[ik].value,
            &self.nodes[iv].value,
            d,
            &plan,
        );
        Ok(self.push(
            dims,
            out,
            Op::Attend {
                q: iq,
                k: ik,
                v: iv,
                plan,
            },
        ))
    }

    /// Zero-padded convolution of `[T, H, W, C_in]` by `[k, k, C_in/g, C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, groups: usize, stride: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let (&[t, h, wd, cin], &[k, k2, cin_g, cout]) = (
            self.nodes[ix].dims.as_slice(),
            self.nodes[iw].dims.as_slice(),
        ) else {
            return Err(shape_err(
                "conv2d expects [T, H, W, C] input and [k, k, in, out] weights".to_string(),
            ));
        };
        if k != k2
            || k % 2 == 0
            || groups == 0
            || stride == 0
            || cin_g * groups != cin
            || cout % groups != 0
        {
            return Err(shape_err(format!(
                "bad conv geometry: kernel {k}x{k2}, {cin} inputs, {groups} groups"
            )));
        }
        let p = k / 2;
        let geom = ConvGeom {
            t,
            h,
            w: wd,
            cin,
            ho: (h + 2 * p - k) / stride + 1,
            wo: (wd + 2 * p - k) / stride + 1,
            cout,
            k,
            groups,
            stride,
        };
        let out = conv_forward(&self.nodes[ix].value, &self.nodes[iw].value, &geom);
        Ok(self.push(
            vec![t, geom.ho, geom.wo, cout],
            out,
            Op::Conv { x: ix, w: iw, geom },
        ))
    }

    /// Mean over every axis but the last.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (r, c) = rows_cols(&self.nodes[ix].dims);
        let mut out = vec![0.0; c];
        for row in self.nodes[ix].value.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.push(vec![c], out, Op::MeanRows(ix)))
    }

    /// Softmax cross-entropy of a logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let il = self.idx(logits)?;
        let z = &self.nodes[il].value;
        if label >= z.len() {
            return Err(shape_err(format!("label {label} for {} classes", z.len())));
        }
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let loss = total.ln() + m - z[label];
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: il,
                label,
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.nodes[ix].value.iter().sum();
        Ok(self.push(vec![1], vec![s], Op::Sum(ix)))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got {:?}",
                self.nodes[il].dims
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[il] = vec![1.0];
        for i in (0..=il).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backward_node(i, &g, &mut grads);
            grads[i] = g;
        }
        Ok(Gradients {
            tape: self.id,
            dims: self.nodes.iter().map(|n| n.dims.clone()).collect(),
            grads,
        })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let val = |j: usize| -> &[f64] { &self.nodes[j].value };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = rows_cols(&self.nodes[*a].dims);
                let n = self.nodes[*b].dims[1];
                let (av, bv) = (val(*a), val(*b));
                let mut da = vec![0.0; r * k];
                let db = ensure(&mut grads[*b], k * n);
                for row in 0..r {
                    let grow = &g[row * n..(row + 1) * n];
                    for kk in 0..k {
                        let brow = &bv[kk * n..(kk + 1) * n];
                        da[row * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let x = av[row * k + kk];
                        if x != 0.0 {
                            for (d, &gg) in db[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *d += x * gg;
                            }
                        }
                    }
                }
                accumulate(&mut grads[*a], &da);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[*a], g);
                accumulate(&mut grads[*b], g);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                accumulate(&mut grads[*a], &da);
                accumulate(&mut grads[*b], &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                accumulate(&mut grads[*a], &da);
            }
            Op::Affine(x, s, b) => {
                let c = val(*s).len();
                let (xv, sv) = (val(*x), val(*s));
                let dx: Vec<f64> = g.iter().enumerate().map(|(j, gg)| gg * sv[j % c]).collect();
                accumulate(&mut grads[*x], &dx);
                add_into(
                    &mut grads[*s],
                    c,
                    g.iter().enumerate().map(|(j, gg)| (j % c, gg * xv[j])),
                );
                add_into(
                    &mut grads[*b],
                    c,
                    g.iter().enumerate().map(|(j, gg)| (j % c, *gg)),
                );
            }
            Op::Reshape(x) => accumulate(&mut grads[*x], g),
            Op::ConcatCols(a, b) => {
                let ((r, ca), (_, cb)) = (
                    rows_cols(&self.nodes[*a].dims),
                    rows_cols(&self.nodes[*b].dims),
                );
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for row in g.chunks_exact(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                accumulate(&mut grads[*a], &da);
                accumulate(&mut grads[*b], &db);
            }
            Op::Lif { x, cfg, mode, h } => {
                let steps = node.dims[0];
                let width = g.len() / steps;
                let theta = cfg.threshold();
                let mut du = vec![0.0; width];
                let mut dx = vec![0.0; g.len()];
                for t in (0..steps).rev() {
                    for (i, dui) in du.iter_mut().enumerate() {
                        let j = t * width + i;
                        let sg = cfg.surrogate.derivative(h[j] - theta);
                        let dh = g[j] * sg + *dui * (1.0 - theta * sg);
                        dx[j] = dh;
                        *dui = if *mode == TemporalMode::Carry {
                            cfg.beta * dh
                        } else {
                            0.0
                        };
                    }
                }
                accumulate(&mut grads[*x], &dx);
            }
            Op::Attend { q, k, v, plan } => {
                let d = node.dims[1];
                let (dq, dk, dv) = attend_backward(val(*q), val(*k), val(*v), g, d, plan);
                accumulate(&mut grads[*q], &dq);
                accumulate(&mut grads[*k], &dk);
                accumulate(&mut grads[*v], &dv);
            }
            Op::Conv { x, w, geom } => {
                let (dx, dw) = conv_backward(val(*x), val(*w), g, geom);
                accumulate(&mut grads[*x], &dx);
                accumulate(&mut grads[*w], &dw);
            }
            Op::MeanRows(x) => {
                let n = self.nodes[*x].value.len();
                let c = g.len();
                let r = (n / c) as f64;
                add_into(&mut grads[*x], n, (0..n).map(|j| (j, g[j % c] / r)));
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let dz: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(j, p)| g[0] * (p - f64::from(u8::from(j == *label))))
                    .collect();
                accumulate(&mut grads[*logits], &dz);
            }
            Op::Sum(x) => {
                let n = self.nodes[*x].value.len();
                add_into(&mut grads[*x], n, (0..n).map(|j| (j, g[0])));
            }
        }
    }
}

fn score_map(score: Score) -> (f64, f64) {
    match score {
        Score::Hamming => (2.0, -1.0),
        Score::Dot => (1.0, 0.0),
    }
}

/// `KV[a][b] = Σ_j f(k_j[a])·v_j[b]` for one group and head.
fn key_value(
    k: &[f64],
    v: &[f64],
    rows: &[usize],
    d: usize,
    off: usize,
    dh: usize,
    (m, c): (f64, f64),
) -> Vec<f64> {
    let mut kv = vec![0.0; dh * dh];
    for &row in rows {
        let base = row * d + off;
        for a in 0..dh {
            let ka = m * k[base + a] + c;
            if ka != 0.0 {
                for b in 0..dh {
                    kv[a * dh + b] += ka * v[base + b];
                }
            }
        }
    }
    kv
}

fn attend_forward(q: &[f64], k: &[f64], v: &[f64], d: usize, plan: &AttendPlan) -> Vec<f64> {
    let dh = d / plan.heads;
    let map = score_map(plan.score);
    let mut out = vec![0.0; q.len()];
    for rows in plan.groups.iter() {
        for head in 0..plan.heads {
            let off = head * dh;
            let kv = key_value(k, v, rows, d, off, dh, map);
            for &row in rows {
                let base = row * d + off;
                for a in 0..dh {
                    let qa = map.0 * q[base + a] + map.1;
                    if qa != 0.0 {
                        for b in 0..dh {
                            out[base + b] += plan.scale * qa * kv[a * dh + b];
                        }
                    }
                }
            }
        }
    }
    out
}

fn attend_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    d: usize,
    plan: &AttendPlan,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / plan.heads;
    let (m, c) = score_map(plan.score);
    let (mut dq, mut dk, mut dv) = (vec![0.0; q.len()], vec![0.0; k.len()], vec![0.0; v.len()]);
    for rows in plan.groups.iter() {
        for head in 0..plan.heads {
            let off = head * dh;
            let kv = key_value(k, v, rows, d, off, dh, (m, c));
            let mut dkv = vec![0.0; dh * dh];
            for &row in rows {
                let base = row * d + off;
                let gp = &g[base..base + dh];
                for a in 0..dh {
                    let dot: f64 = gp
                        .iter()
                        .zip(&kv[a * dh..(a + 1) * dh])
                        .map(|(x, y)| x * y)
                        .sum();
                    dq[base + a] += m * plan.scale * dot;
                    let qa = plan.scale * (m * q[base + a] + c);
                    for b in 0..dh {
                        dkv[a * dh + b] += qa * gp[b];
                    }
                }
            }
            for &row in rows {
                let base = row * d + off;
                for a in 0..dh {
                    let row_a = &dkv[a * dh..(a + 1) * dh];
                    let dot: f64 = row_a
                        .iter()
                        .zip(&v[base..base + dh])
                        .map(|(x, y)| x * y)
                        .sum();
                    dk[base + a] += m * dot;
                    let ka = m * k[base + a] + c;
                    for b in 0..dh {
                        dv[base + b] += ka * row_a[b];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Output coordinate reached from input coordinate `i` through tap `k`.
fn tap_target(i: usize, k: usize, p: usize, s: usize, len: usize) -> Option<usize> {
    let shifted = (i + p).checked_sub(k)?;
    (shifted % s == 0 && shifted / s < len).then_some(shifted / s)
}

/// Visits every (input position, tap, output position) triple of a conv.
fn for_each_tap(geom: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let p = geom.k / 2;
    for t in 0..geom.t {
        for y in 0..geom.h {
            for ky in 0..geom.k {
                let Some(oy) = tap_target(y, ky, p, geom.stride, geom.ho) else {
                    continue;
                };
                for x in 0..geom.w {
                    for kx in 0..geom.k {
                        let Some(ox) = tap_target(x, kx, p, geom.stride, geom.wo) else {
                            continue;
                        };
                        let input = (t * geom.h + y) * geom.w + x;
                        let output = (t * geom.ho + oy) * geom.wo + ox;
                        f(input, ky * geom.k + kx, output);
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &[f64], w: &[f64], geom: &ConvGeom) -> Vec<f64> {
    let (cin, cout) = (geom.cin, geom.cout);
    let (cin_g, cout_g) = (cin / geom.groups, cout / geom.groups);
    let mut out = vec![0.0; geom.t * geom.ho * geom.wo * cout];
    for_each_tap(geom, |input, tap, output| {
        for ci in 0..cin {
            let xv = x[input * cin + ci];
            if xv == 0.0 {
                continue;
            }
            let (g, cl) = (ci / cin_g, ci % cin_g);
            let wrow = (tap * cin_g + cl) * cout + g * cout_g;
            let orow = output * cout + g * cout_g;
            for (o, &wv) in out[orow..orow + cout_g]
                .iter_mut()
                .zip(&w[wrow..wrow + cout_g])
            {
                *o += xv * wv;
            }
        }
    });
    out
}

fn conv_backward(x: &[f64], w: &[f64], g: &[f64], geom: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let (cin, cout) = (geom.cin, geom.cout);
    let (cin_g, cout_g) = (cin / geom.groups, cout / geom.groups);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for_each_tap(geom, |input, tap, output| {
        for ci in 0..cin {
            let (grp, cl) = (ci / cin_g, ci % cin_g);
            let wrow = (tap * cin_g + cl) * cout + grp * cout_g;
            let grow = &g[output * cout + grp * cout_g..output * cout + (grp + 1) * cout_g];
            dx[input * cin + ci] += grow
                .iter()
                .zip(&w[wrow..wrow + cout_g])
                .map(|(a, b)| a * b)
                .sum::<f64>();
            let xv = x[input * cin + ci];
            if xv != 0.0 {
                for (d, &gg) in dw[wrow..wrow + cout_g].iter_mut().zip(grow) {
                    *d += xv * gg;
                }
            }
        }
    });
    (dx, dw)
}

#[cfg(test)]
mod tests;
