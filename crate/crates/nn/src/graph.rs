//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass and
//! replays the tape backwards in [`Graph::backward`]. Parameters are read from
//! a borrowed [`ParamStore`]; gradients and batch-norm statistics are handed
//! back to the caller, who applies them to the store once the graph is gone.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NnError, Result};
use crate::params::{BnUpdate, ParamStore};
use crate::tensor::{gemm, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-class weights and focusing parameters of the focal loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    pub w0: f64,
    pub w1: f64,
}

enum Op {
    Leaf,
    Param,
    MatMul {
        x: Var,
        w: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        valid: Option<Vec<bool>>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    MeanPool {
        x: Var,
        mask: Vec<bool>,
        counts: Vec<usize>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    BroadcastRows {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Focal {
        logits: Var,
        dlogits: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        w: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    mode: Mode,
    dropout: bool,
    step: u64,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
    bn_updates: Vec<BnUpdate>,
}

/// Result of a backward pass.
pub struct Gradients {
    node_grads: Vec<Option<Vec<f64>>>,
    param_nodes: Vec<(usize, usize)>,
    n_params: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (zeros when unreachable).
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.node_grads[v.0].as_deref()
    }

    /// Gradients aligned with [`ParamStore::params`].
    pub fn params(&self) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; self.n_params];
        for &(p, node) in &self.param_nodes {
            out[p] = self.node_grads[node].clone();
        }
        out
    }
}

impl<'s> Graph<'s> {
    /// `step` keys the dropout streams together with the store seed.
    pub fn new(store: &'s ParamStore, mode: Mode, step: u64) -> Self {
        Self {
            store,
            mode,
            dropout: mode == Mode::Train,
            step,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    /// Training-mode graph with dropout turned off, as used by gradient checks.
    pub fn without_dropout(mut self) -> Self {
        self.dropout = false;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Running-statistics updates recorded by training-mode batch norms.
    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate> {
        self.bn_updates
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "constant")
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self.store.param_index(name)?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        let value = self.store.params()[idx].value.clone();
        let v = self.push(value, Op::Param, "param")?;
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    /// `x · w` over the last axis of `x`; `w` is `[k, n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.cols() != wv.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", xv.shape(), wv.shape())));
        }
        let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, xv.data(), false, wv.data(), false, 0.0, &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(&shape, out)?, Op::MatMul { x, w }, "matmul")
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.shape().len() != 1 || bv.len() != xv.cols() {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % c];
        }
        self.push(out, Op::AddBias { x, b }, "add_bias")
    }

    /// `x · w + b` with parameters `{prefix}.w`, `{prefix}.b`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, Op::Add { a, b }, "add")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(xv.shape(), data)?;
        self.push(t, Op::Relu { x }, "relu")
    }

    /// Batch norm over the flattened rows of `x` (per channel = last axis).
    ///
    /// In training mode statistics come from the rows whose `valid` flag is
    /// set (all rows when `valid` is `None`) and an update of the running
    /// statistics is recorded; in eval mode the running statistics stored
    /// under `prefix` are used. Invalid rows are normalized with the same
    /// statistics but never influence them.
    pub fn batchnorm(&mut self, x: Var, prefix: &str, valid: Option<&[bool]>) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        if self.value(gamma).len() != c || valid.is_some_and(|m| m.len() != rows) {
            return Err(shape_err(
                "batchnorm",
                format!("input {:?}, {} channels", xv.shape(), self.value(gamma).len()),
            ));
        }
        let is_valid = |r: usize| valid.is_none_or(|m| m[r]);
        let n_valid = (0..rows).filter(|&r| is_valid(r)).count();
        let batch_stats = self.mode == Mode::Train && n_valid > 0;
        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for r in (0..rows).filter(|&r| is_valid(r)) {
                for (m, x) in mean.iter_mut().zip(&xv.data()[r * c..(r + 1) * c]) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n_valid as f64);
            for r in (0..rows).filter(|&r| is_valid(r)) {
                for j in 0..c {
                    let d = xv.data()[r * c + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n_valid as f64);
            (mean, var)
        } else if self.mode == Mode::Eval {
            let mean = self.store.buffer(&format!("{prefix}.running_mean"))?.data().to_vec();
            let var = self.store.buffer(&format!("{prefix}.running_var"))?.data().to_vec();
            (mean, var)
        } else {
            (vec![0.0; c], vec![1.0; c])
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * c];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            for j in 0..c {
                let h = (xv.data()[r * c + j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        let valid = valid.map(<[bool]>::to_vec);
        if batch_stats {
            self.bn_updates.push(BnUpdate { prefix: prefix.to_string(), mean, var });
        }
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, valid, batch_stats };
        self.push(t, op, "batchnorm")
    }

    /// Inverted dropout keyed by `(store seed, layer, step)` and, per row of
    /// the last axis, by the row's (sample, position) coordinates, so padding
    /// rows never shift the mask of valid ones. Identity unless the graph is
    /// in training mode with dropout enabled.
    pub fn dropout(&mut self, x: Var, p: f64, layer: u64) -> Result<Var> {
        if !self.dropout || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(shape_err("dropout", format!("rate {p} must be below 1")));
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.store.seed.to_le_bytes());
        key[8..16].copy_from_slice(&layer.to_le_bytes());
        key[16..24].copy_from_slice(&self.step.to_le_bytes());
        let xv = self.value(x);
        let shape = xv.shape();
        let cols = shape.last().copied().unwrap_or(1).max(1);
        let per_sample = if shape.len() >= 3 { shape[shape.len() - 2].max(1) } else { 1 };
        let keep = 1.0 / (1.0 - p);
        let mut scale = Vec::with_capacity(xv.len());
        for row in 0..xv.len() / cols {
            let tag = ((row / per_sample) as u64) << 32 | (row % per_sample) as u64;
            key[24..].copy_from_slice(&tag.to_le_bytes());
            let mut rng = ChaCha8Rng::from_seed(key);
            scale.extend((0..cols).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }));
        }
        let data = xv.data().iter().zip(&scale).map(|(a, s)| a * s).collect();
        let t = Tensor::new(xv.shape(), data)?;
        self.push(t, Op::Dropout { x, scale }, "dropout")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let t = Tensor::new(xv.shape(), out)?;
        self.push(t, Op::Softmax { x }, "softmax")
    }

    fn check_bnc(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return Err(shape_err(op, format!("expected [batch, rows, channels], got {s:?}")));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// Mean over axis 1 of `[B, N, C]` restricted to rows with `mask` set;
    /// samples without valid rows pool to zero.
    pub fn mean_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (b, n, c) = self.check_bnc("mean_pool", x)?;
        if mask.len() != b * n {
            return Err(shape_err("mean_pool", format!("mask of {} for {b}x{n} rows", mask.len())));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * c];
        let mut counts = vec![0usize; b];
        for s in 0..b {
            for r in (0..n).filter(|&r| mask[s * n + r]) {
                counts[s] += 1;
                for j in 0..c {
                    out[s * c + j] += xv[(s * n + r) * c + j];
                }
            }
            if counts[s] > 0 {
                out[s * c..(s + 1) * c].iter_mut().for_each(|v| *v /= counts[s] as f64);
            }
        }
        let t = Tensor::new(&[b, c], out)?;
        self.push(t, Op::MeanPool { x, mask: mask.to_vec(), counts }, "mean_pool")
    }

    /// Maximum over axis 1 of `[B, N, C]`; ties resolve to the first row.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let (b, n, c) = self.check_bnc("max_pool", x)?;
        if n == 0 {
            return Err(shape_err("max_pool", "no rows to pool"));
        }
        let xv = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; b * c];
        let mut argmax = vec![0usize; b * c];
        for s in 0..b {
            for r in 0..n {
                for j in 0..c {
                    let v = xv[(s * n + r) * c + j];
                    if v > out[s * c + j] {
                        out[s * c + j] = v;
                        argmax[s * c + j] = (s * n + r) * c + j;
                    }
                }
            }
        }
        let t = Tensor::new(&[b, c], out)?;
        self.push(t, Op::MaxPool { x, argmax }, "max_pool")
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", format!("{sa:?} ++ {sb:?}")));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            out.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        self.push(Tensor::new(&shape, out)?, Op::Concat { a, b }, "concat")
    }

    /// `[B, C]` → `[B, n, C]` by repeating each row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(shape_err("broadcast_rows", format!("expected [batch, channels], got {:?}", xv.shape())));
        }
        let (b, c) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(b * n * c);
        for s in 0..b {
            for _ in 0..n {
                out.extend_from_slice(&xv.data()[s * c..(s + 1) * c]);
            }
        }
        self.push(Tensor::new(&[b, n, c], out)?, Op::BroadcastRows { x }, "broadcast_rows")
    }

    /// Scaled dot-product attention split over `heads` heads. `q`, `k`, `v`
    /// are `[B, N, H]`; keys with `mask` unset receive zero weight. A sample
    /// without valid keys yields zero output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &[bool], heads: usize) -> Result<Var> {
        let (b, n, h) = self.check_bnc("attention", q)?;
        if self.value(k).shape() != [b, n, h] || self.value(v).shape() != [b, n, h] {
            return Err(shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", [b, n, h], self.value(k).shape(), self.value(v).shape()),
            ));
        }
        if heads == 0 || h % heads != 0 || mask.len() != b * n {
            return Err(shape_err("attention", format!("{h} channels, {heads} heads, mask {}", mask.len())));
        }
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; b * heads * n * n];
        let mut out = vec![0.0; b * n * h];
        for s in 0..b {
            let valid: Vec<usize> = (0..n).filter(|&j| mask[s * n + j]).collect();
            if valid.is_empty() {
                continue;
            }
            for hd in 0..heads {
                let off = hd * d;
                for i in 0..n {
                    let qi = &qv[(s * n + i) * h + off..][..d];
                    let p = &mut probs[((s * heads + hd) * n + i) * n..][..n];
                    let mut mx = f64::NEG_INFINITY;
                    for &j in &valid {
                        let kj = &kv[(s * n + j) * h + off..][..d];
                        let sc = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[j] = sc;
                        mx = mx.max(sc);
                    }
                    let mut sum = 0.0;
                    for &j in &valid {
                        p[j] = (p[j] - mx).exp();
                        sum += p[j];
                    }
                    let o = &mut out[(s * n + i) * h + off..][..d];
                    for &j in &valid {
                        p[j] /= sum;
                        let vj = &vv[(s * n + j) * h + off..][..d];
                        for t in 0..d {
                            o[t] += p[j] * vj[t];
                        }
                    }
                }
            }
        }
        let t = Tensor::new(&[b, n, h], out)?;
        self.push(t, Op::Attention { q, k, v, heads, probs }, "attention")
    }

    /// Multi-head self-attention with input/output projections registered as
    /// `{prefix}.{q,k,v,o}`.
    pub fn multihead_attention(&mut self, x: Var, prefix: &str, mask: &[bool], heads: usize) -> Result<Var> {
        let q = self.linear(x, &format!("{prefix}.q"))?;
        let k = self.linear(x, &format!("{prefix}.k"))?;
        let v = self.linear(x, &format!("{prefix}.v"))?;
        let a = self.attention(q, k, v, mask, heads)?;
        self.linear(a, &format!("{prefix}.o"))
    }

    /// Masked, class-weighted focal loss of two-class `logits` `[B, N, 2]`,
    /// averaged over rows with `mask` set.
    ///
    /// `ℓ = w_y · α · (1 − p_t)^γ · (−log p_t)` with `p_t` the softmax
    /// probability of the true class, computed through log-sum-exp.
    pub fn focal_loss(&mut self, logits: Var, labels: &[bool], mask: &[bool], fp: FocalParams) -> Result<Var> {
        let lv = self.value(logits);
        if lv.cols() != 2 || labels.len() != lv.rows() || mask.len() != lv.rows() {
            return Err(shape_err(
                "focal_loss",
                format!("logits {:?}, {} labels, {} mask entries", lv.shape(), labels.len(), mask.len()),
            ));
        }
        let n_valid = mask.iter().filter(|&&m| m).count();
        if n_valid == 0 {
            return Err(NnError::EmptyBatch);
        }
        let norm = n_valid as f64;
        let mut total = 0.0;
        let mut dlogits = vec![0.0; lv.len()];
        for r in (0..lv.rows()).filter(|&r| mask[r]) {
            let s = &lv.data()[2 * r..2 * r + 2];
            let t = labels[r] as usize;
            let mx = s[0].max(s[1]);
            let lse = mx + ((s[0] - mx).exp() + (s[1] - mx).exp()).ln();
            let log_pt = s[t] - lse;
            let pt = log_pt.exp();
            // 1 − p_t is the other class's probability; computed directly to
            // keep precision when p_t is close to one.
            let q = (s[1 - t] - lse).exp();
            let w = if t == 1 { fp.w1 } else { fp.w0 } * fp.alpha;
            let mod_ = if fp.gamma == 0.0 { 1.0 } else { q.powf(fp.gamma) };
            total += w * mod_ * -log_pt;
            // dℓ/ds_t = w[(1−p)^γ (p − 1) + γ (1−p)^γ p log p]; ds_other = −ds_t.
            let focus = if fp.gamma == 0.0 { 0.0 } else { fp.gamma * mod_ * pt * log_pt };
            let d_t = w * (-mod_ * q + focus);
            dlogits[2 * r + t] = d_t / norm;
            dlogits[2 * r + 1 - t] = -d_t / norm;
        }
        self.push(Tensor::scalar(total / norm), Op::Focal { logits, dlogits }, "focal_loss")
    }

    /// `Σ wᵢ xᵢ`, a scalar probe used by gradient checks.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if w.len() != xv.len() {
            return Err(shape_err("weighted_sum", format!("{} weights for {:?}", w.len(), xv.shape())));
        }
        let s = xv.data().iter().zip(w).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, w: w.to_vec() }, "weighted_sum")
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            self.backward_node(id, &gy, &mut grads);
            if cfg!(debug_assertions) && gy.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFinite { op: "backward" });
            }
            grads[id] = Some(gy);
        }
        let param_nodes = self.param_vars.iter().map(|(&p, v)| (p, v.0)).collect();
        Ok(Gradients { node_grads: grads, param_nodes, n_params: self.store.params().len() })
    }

    fn backward_node(&self, id: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                gemm(m, n, k, gy, false, wv.data(), true, 1.0, acc(grads, *x, xv.len()));
                gemm(k, m, n, xv.data(), true, gy, false, 1.0, acc(grads, *w, wv.len()));
            }
            Op::AddBias { x, b } => {
                let c = self.value(*b).len();
                add_to(acc(grads, *x, gy.len()), gy);
                let gb = acc(grads, *b, c);
                for (i, g) in gy.iter().enumerate() {
                    gb[i % c] += g;
                }
            }
            Op::Add { a, b } => {
                add_to(acc(grads, *a, gy.len()), gy);
                add_to(acc(grads, *b, gy.len()), gy);
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, gy.len());
                for i in 0..gy.len() {
                    if xv[i] > 0.0 {
                        gx[i] += gy[i];
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, valid, batch_stats } => {
                let xv = self.value(*x);
                let (rows, c) = (xv.rows(), xv.cols());
                let g = self.value(*gamma).data();
                let gg = acc(grads, *gamma, c);
                for r in 0..rows {
                    for j in 0..c {
                        gg[j] += gy[r * c + j] * xhat[r * c + j];
                    }
                }
                let gb = acc(grads, *beta, c);
                for r in 0..rows {
                    for j in 0..c {
                        gb[j] += gy[r * c + j];
                    }
                }
                let is_valid = |r: usize| valid.as_ref().is_none_or(|m| m[r]);
                let gx = acc(grads, *x, xv.len());
                if *batch_stats {
                    let n = (0..rows).filter(|&r| is_valid(r)).count() as f64;
                    let mut sum = vec![0.0; c];
                    let mut sum_h = vec![0.0; c];
                    // Invalid rows are normalized with the valid rows'
                    // statistics, so they feed back through the sums too.
                    for r in 0..rows {
                        for j in 0..c {
                            let dh = gy[r * c + j] * g[j];
                            sum[j] += dh;
                            sum_h[j] += dh * xhat[r * c + j];
                        }
                    }
                    for r in 0..rows {
                        for j in 0..c {
                            let dh = gy[r * c + j] * g[j];
                            gx[r * c + j] += if is_valid(r) {
                                inv_std[j] / n * (n * dh - sum[j] - xhat[r * c + j] * sum_h[j])
                            } else {
                                dh * inv_std[j]
                            };
                        }
                    }
                } else {
                    for r in 0..rows {
                        for j in 0..c {
                            gx[r * c + j] += gy[r * c + j] * g[j] * inv_std[j];
                        }
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let gx = acc(grads, *x, gy.len());
                for i in 0..gy.len() {
                    gx[i] += gy[i] * scale[i];
                }
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let c = node.value.cols();
                let gx = acc(grads, *x, gy.len());
                for r in 0..y.len() / c {
                    let (yr, gr) = (&y[r * c..][..c], &gy[r * c..][..c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::MeanPool { x, mask, counts } => {
                let s = self.value(*x).shape();
                let (b, n, c) = (s[0], s[1], s[2]);
                let gx = acc(grads, *x, b * n * c);
                for smp in 0..b {
                    if counts[smp] == 0 {
                        continue;
                    }
                    let inv = 1.0 / counts[smp] as f64;
                    for r in (0..n).filter(|&r| mask[smp * n + r]) {
                        for j in 0..c {
                            gx[(smp * n + r) * c + j] += gy[smp * c + j] * inv;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let gx = acc(grads, *x, self.value(*x).len());
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += gy[o];
                }
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let rows = self.value(*a).rows();
                let ga = acc(grads, *a, rows * ca);
                for r in 0..rows {
                    add_to(&mut ga[r * ca..(r + 1) * ca], &gy[r * (ca + cb)..][..ca]);
                }
                let gb = acc(grads, *b, rows * cb);
                for r in 0..rows {
                    add_to(&mut gb[r * cb..(r + 1) * cb], &gy[r * (ca + cb) + ca..][..cb]);
                }
            }
            Op::BroadcastRows { x } => {
                let s = node.value.shape();
                let (b, n, c) = (s[0], s[1], s[2]);
                let gx = acc(grads, *x, b * c);
                for smp in 0..b {
                    for r in 0..n {
                        add_to(&mut gx[smp * c..(smp + 1) * c], &gy[(smp * n + r) * c..][..c]);
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let s = node.value.shape();
                let (b, n, h) = (s[0], s[1], s[2]);
                self.attention_backward(*q, *k, *v, (b, n, h, *heads), probs, gy, grads);
            }
            Op::Focal { logits, dlogits } => {
                let gx = acc(grads, *logits, dlogits.len());
                for (g, d) in gx.iter_mut().zip(dlogits) {
                    *g += gy[0] * d;
                }
            }
            Op::WeightedSum { x, w } => {
                let gx = acc(grads, *x, w.len());
                for (g, wi) in gx.iter_mut().zip(w) {
                    *g += gy[0] * wi;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        (b, n, h, heads): (usize, usize, usize, usize),
        probs: &[f64],
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut gq = vec![0.0; b * n * h];
        let mut gk = vec![0.0; b * n * h];
        let mut gv = vec![0.0; b * n * h];
        let mut dp = vec![0.0; n];
        for s in 0..b {
            for hd in 0..heads {
                let off = hd * d;
                for i in 0..n {
                    let p = &probs[((s * heads + hd) * n + i) * n..][..n];
                    let go = &gy[(s * n + i) * h + off..][..d];
                    let mut dot = 0.0;
                    for j in 0..n {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vj = &vv[(s * n + j) * h + off..][..d];
                        dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dot += p[j] * dp[j];
                        let gvj = &mut gv[(s * n + j) * h + off..][..d];
                        for t in 0..d {
                            gvj[t] += p[j] * go[t];
                        }
                    }
                    for j in 0..n {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - dot) * scale;
                        for t in 0..d {
                            gq[(s * n + i) * h + off + t] += ds * kv[(s * n + j) * h + off + t];
                            gk[(s * n + j) * h + off + t] += ds * qv[(s * n + i) * h + off + t];
                        }
                    }
                }
            }
        }
        add_to(acc(grads, q, gq.len()), &gq);
        add_to(acc(grads, k, gk.len()), &gk);
        add_to(acc(grads, v, gv.len()), &gv);
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
