//! The TUN network: a persistence-diagram encoder with self-attention, a
//! PointNet-style cloud encoder, auxiliary statistics, a fusion MLP and a
//! per-point classifier, trained with a masked focal loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tun_nn::checkpoint;
use tun_nn::gradcheck::{check_params, CheckOptions, GradCheckReport};
use tun_nn::{cosine_lr, AdamW, FocalParams, Graph, Mode, NnError, ParamStore, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::eval::{metrics, ConfusionCounts};
use crate::features::{AuxGroups, FeatureBundle, FeatureToggles};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub w0: f64,
    pub w1: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 1.0, gamma: 2.0, w0: 1.0, w1: 2.0 }
    }
}

impl From<FocalConfig> for FocalParams {
    fn from(f: FocalConfig) -> Self {
        FocalParams { alpha: f.alpha, gamma: f.gamma, w0: f.w0, w1: f.w1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunConfig {
    /// Width `H` of both encoders.
    pub hidden: usize,
    /// Width `F` of the fused global context.
    pub fusion: usize,
    pub heads: usize,
    pub n_pd: usize,
    pub n_pc: usize,
    pub dropout_pd: f64,
    pub dropout_fusion: f64,
    pub dropout_clf1: f64,
    pub dropout_clf2: f64,
    pub focal: FocalConfig,
    pub batch_size: usize,
    pub use_cloud: bool,
    pub aux_groups: AuxGroups,
    pub seed: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TunConfig {
    /// CPU-sized configuration.
    pub fn desk() -> Self {
        Self {
            hidden: 64,
            fusion: 64,
            heads: 4,
            n_pd: 32,
            n_pc: 512,
            dropout_pd: 0.1,
            dropout_fusion: 0.3,
            dropout_clf1: 0.4,
            dropout_clf2: 0.3,
            focal: FocalConfig::default(),
            batch_size: 8,
            use_cloud: true,
            aux_groups: AuxGroups::ALL,
            seed: 0,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            max_epochs: 200,
            patience: 10,
        }
    }

    /// Full-size configuration of the original model.
    pub fn full_scale() -> Self {
        Self { hidden: 256, fusion: 256, heads: 8, n_pd: 100, n_pc: 50_000, batch_size: 16, ..Self::desk() }
    }

    /// Ablation variant `k` in 1..=6: PD only, no auxiliary features, then
    /// without PD statistics, cloud statistics, noise features, bounding box.
    pub fn ablation(mut self, k: usize) -> Result<Self> {
        let all = AuxGroups::ALL;
        match k {
            1 => {
                self.use_cloud = false;
                self.aux_groups = AuxGroups::NONE;
            }
            2 => self.aux_groups = AuxGroups::NONE,
            3 => self.aux_groups = AuxGroups { pd_stats: false, ..all },
            4 => self.aux_groups = AuxGroups { pc_stats: false, ..all },
            5 => self.aux_groups = AuxGroups { noise: false, ..all },
            6 => self.aux_groups = AuxGroups { bbox: false, ..all },
            _ => return Err(CoreError::InvalidInput(format!("no ablation {k}; expected 1..=6"))),
        }
        Ok(self)
    }

    pub fn toggles(&self) -> FeatureToggles {
        FeatureToggles { use_cloud: self.use_cloud, aux: self.aux_groups }
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_groups.len()
    }

    /// Fusion input width: one `F/2` projection per active branch.
    pub fn fusion_input_dim(&self) -> usize {
        self.fusion / 2 * (1 + self.use_cloud as usize + !self.aux_groups.is_empty() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidInput(m));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden width {} must be a positive multiple of {} heads", self.hidden, self.heads));
        }
        if self.fusion < 2 || !self.fusion.is_multiple_of(2) {
            return bad(format!("fusion width {} must be even", self.fusion));
        }
        if self.n_pd == 0 || (self.use_cloud && self.n_pc == 0) || self.batch_size == 0 {
            return bad("capacities and batch size must be positive".into());
        }
        for p in [self.dropout_pd, self.dropout_fusion, self.dropout_clf1, self.dropout_clf2] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Several bundles stacked along a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub pd: Tensor,
    pub mask: Vec<bool>,
    pub labels: Vec<bool>,
    pub aux: Option<Tensor>,
    pub cloud: Option<Tensor>,
}

impl Batch {
    pub fn new(bundles: &[&FeatureBundle], cfg: &TunConfig) -> Result<Self> {
        let b = bundles.len();
        if b == 0 {
            return Err(CoreError::Shape("empty batch".into()));
        }
        let (n, a, p) = (cfg.n_pd, cfg.aux_dim(), cfg.n_pc);
        let mut pd = Vec::with_capacity(b * n * 4);
        let mut mask = Vec::with_capacity(b * n);
        let mut labels = Vec::with_capacity(b * n);
        let mut aux = Vec::with_capacity(b * a);
        let mut cloud = Vec::with_capacity(if cfg.use_cloud { b * p * 3 } else { 0 });
        for (i, f) in bundles.iter().enumerate() {
            if f.pd_feats.len() != n || f.mask.len() != n {
                return Err(CoreError::Shape(format!(
                    "bundle {i} has {} diagram rows, model expects {n}",
                    f.pd_feats.len()
                )));
            }
            if f.aux.len() != a {
                return Err(CoreError::Shape(format!(
                    "bundle {i} has {} auxiliary values, model expects {a}",
                    f.aux.len()
                )));
            }
            if cfg.use_cloud && f.cloud.len() != p {
                return Err(CoreError::Shape(format!(
                    "bundle {i} has {} cloud points, model expects {p}",
                    f.cloud.len()
                )));
            }
            pd.extend(f.pd_feats.iter().flatten());
            mask.extend(&f.mask);
            match &f.labels {
                Some(l) if l.len() == n => labels.extend(l.iter().zip(&f.mask).map(|(&y, &m)| y && m)),
                Some(l) => return Err(CoreError::Shape(format!("bundle {i} has {} labels for {n} rows", l.len()))),
                None => labels.extend(std::iter::repeat_n(false, n)),
            }
            aux.extend(&f.aux);
            if cfg.use_cloud {
                cloud.extend(f.cloud.iter().flatten());
            }
        }
        Ok(Self {
            size: b,
            pd: Tensor::new(&[b, n, 4], pd)?,
            mask,
            labels,
            aux: (a > 0).then(|| Tensor::new(&[b, a], aux)).transpose()?,
            cloud: cfg.use_cloud.then(|| Tensor::new(&[b, p, 3], cloud)).transpose()?,
        })
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TunModel {
    pub cfg: TunConfig,
    pub store: ParamStore,
}

const PD_WIDTH: usize = 64;
const PC_WIDTH: usize = 64;

impl TunModel {
    pub fn new(cfg: TunConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, f) = (cfg.hidden, cfg.fusion);
        let d = cfg.fusion_input_dim();
        let branches = 1 + cfg.use_cloud as usize + (cfg.aux_dim() > 0) as usize;
        assert_eq!(d, branches * f / 2, "fusion input width");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new(cfg.seed);
        let mut layer = |s: &mut ParamStore, name: &str, i: usize, o: usize, bn: bool| -> Result<()> {
            s.add_linear(name, i, o, &mut rng)?;
            if bn {
                s.add_batchnorm(&format!("{name}.bn"), o)?;
            }
            Ok(())
        };
        layer(&mut s, "pd.fc1", 4, PD_WIDTH, true)?;
        layer(&mut s, "pd.fc2", PD_WIDTH, PD_WIDTH, true)?;
        layer(&mut s, "pd.fc3", PD_WIDTH, h, true)?;
        for p in ["q", "k", "v", "o"] {
            layer(&mut s, &format!("pd.attn.{p}"), h, h, false)?;
        }
        layer(&mut s, "fuse.pd", h, f / 2, false)?;
        if cfg.use_cloud {
            layer(&mut s, "pc.fc1", 3, PC_WIDTH, true)?;
            layer(&mut s, "pc.fc2", PC_WIDTH, PC_WIDTH, true)?;
            layer(&mut s, "pc.fc3", PC_WIDTH, h, true)?;
            layer(&mut s, "pc.global1", h, 2 * h, true)?;
            layer(&mut s, "pc.global2", 2 * h, h, true)?;
            layer(&mut s, "fuse.pc", h, f / 2, false)?;
        }
        if cfg.aux_dim() > 0 {
            s.add_batchnorm("fuse.aux_in", cfg.aux_dim())?;
            layer(&mut s, "fuse.aux", cfg.aux_dim(), f / 2, false)?;
        }
        layer(&mut s, "fuse.fc1", d, f, true)?;
        layer(&mut s, "fuse.fc2", f, f, true)?;
        layer(&mut s, "clf.fc1", h + f, f, true)?;
        layer(&mut s, "clf.fc2", f, f / 2, true)?;
        layer(&mut s, "clf.fc3", f / 2, 2, false)?;
        Ok(Self { cfg, store: s })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.cfg).map_err(|e| CoreError::InvalidInput(e.to_string()))?;
        checkpoint::save(path, &self.store, &json).map_err(|e| match e {
            NnError::Io(source) => CoreError::Io { path: path.to_path_buf(), source },
            other => other.into(),
        })
    }

    /// Loads a checkpoint and checks that its parameters match the
    /// architecture its configuration describes.
    pub fn load(path: &Path) -> Result<Self> {
        let (store, json) = checkpoint::load(path).map_err(|e| match e {
            NnError::Io(source) => CoreError::Io { path: path.to_path_buf(), source },
            NnError::IncompatibleCheckpoint(msg) => {
                CoreError::IncompatibleCheckpoint(format!("{}: {msg}", path.display()))
            }
            other => CoreError::IncompatibleCheckpoint(format!("{}: {other}", path.display())),
        })?;
        let cfg: TunConfig = serde_json::from_str(&json)
            .map_err(|e| CoreError::IncompatibleCheckpoint(format!("{}: {e}", path.display())))?;
        let fresh = TunModel::new(cfg.clone())?;
        let layout = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
            s.params()
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .chain(s.buffers().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())))
                .collect()
        };
        if layout(&fresh.store) != layout(&store) {
            return Err(CoreError::IncompatibleCheckpoint(format!(
                "{}: parameters do not match the stored configuration",
                path.display()
            )));
        }
        Ok(Self { cfg, store })
    }
}

/// Linear layer, optional (masked) batch norm, ReLU, optional dropout.
fn block(g: &mut Graph, x: Var, name: &str, valid: Option<&[bool]>, dropout: f64, layer: u64) -> Result<Var> {
    let y = g.linear(x, name)?;
    let y = g.batchnorm(y, &format!("{name}.bn"), valid)?;
    let y = g.relu(y)?;
    Ok(g.dropout(y, dropout, layer)?)
}

/// Logits `[B, N_pd, 2]` for a batch.
pub fn forward(g: &mut Graph, cfg: &TunConfig, batch: &Batch) -> Result<Var> {
    let mask = Some(&batch.mask[..]);
    let x = g.constant(batch.pd.clone())?;
    let h = block(g, x, "pd.fc1", mask, cfg.dropout_pd, 1)?;
    let h = block(g, h, "pd.fc2", mask, cfg.dropout_pd, 2)?;
    let h = block(g, h, "pd.fc3", mask, 0.0, 0)?;
    let att = g.multihead_attention(h, "pd.attn", &batch.mask, cfg.heads)?;
    let ctx = g.add(h, att)?;
    let g_pd = g.mean_pool(ctx, &batch.mask)?;
    let mut fused = g.linear(g_pd, "fuse.pd")?;

    if cfg.use_cloud {
        let cloud = batch.cloud.clone().ok_or_else(|| CoreError::Shape("batch has no cloud".into()))?;
        let c = g.constant(cloud)?;
        let c = block(g, c, "pc.fc1", None, 0.0, 0)?;
        let c = block(g, c, "pc.fc2", None, 0.0, 0)?;
        let c = block(g, c, "pc.fc3", None, 0.0, 0)?;
        let c = block(g, c, "pc.global1", None, 0.0, 0)?;
        let c = block(g, c, "pc.global2", None, 0.0, 0)?;
        let g_pc = g.max_pool(c)?;
        let p = g.linear(g_pc, "fuse.pc")?;
        fused = g.concat(fused, p)?;
    }
    if cfg.aux_dim() > 0 {
        let aux = batch.aux.clone().ok_or_else(|| CoreError::Shape("batch has no auxiliary features".into()))?;
        let a = g.constant(aux)?;
        let a = g.batchnorm(a, "fuse.aux_in", None)?;
        let p = g.linear(a, "fuse.aux")?;
        fused = g.concat(fused, p)?;
    }
    let f = block(g, fused, "fuse.fc1", None, cfg.dropout_fusion, 10)?;
    let f = block(g, f, "fuse.fc2", None, 0.0, 0)?;

    let f = g.broadcast_rows(f, cfg.n_pd)?;
    let z = g.concat(ctx, f)?;
    let z = block(g, z, "clf.fc1", mask, cfg.dropout_clf1, 20)?;
    let z = block(g, z, "clf.fc2", mask, cfg.dropout_clf2, 21)?;
    Ok(g.linear(z, "clf.fc3")?)
}

/// Mean of `w_y · α · (1 − p_t)^γ · (−log p_t)` over valid rows.
pub fn focal_loss(g: &mut Graph, logits: Var, batch: &Batch, focal: FocalConfig) -> Result<Var> {
    Ok(g.focal_loss(logits, &batch.labels, &batch.mask, focal.into())?)
}

/// Class probabilities `[rows][2]` from a logits tensor.
pub fn probabilities(logits: &Tensor) -> Vec<[f64; 2]> {
    logits
        .data()
        .chunks(2)
        .map(|s| {
            let m = s[0].max(s[1]);
            let (e0, e1) = ((s[0] - m).exp(), (s[1] - m).exp());
            [e0 / (e0 + e1), e1 / (e0 + e1)]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_f1,lr\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.val_loss,
            crate::eval::fmt_metric(e.val_f1),
            e.lr
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: TunModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Batches of `batch_size`; a trailing single sample joins the previous
/// batch so batch statistics never come from one sample.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Validation loss (valid-row weighted) and pooled confusion in eval mode.
pub fn evaluate_loss(model: &TunModel, data: &[FeatureBundle]) -> Result<(f64, ConfusionCounts)> {
    let cfg = &model.cfg;
    let (mut total, mut weight) = (0.0, 0usize);
    let mut counts = ConfusionCounts::default();
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(cfg.batch_size) {
        let refs: Vec<&FeatureBundle> = chunk.iter().map(|&i| &data[i]).collect();
        let batch = Batch::new(&refs, cfg)?;
        let mut g = Graph::new(&model.store, Mode::Eval, 0);
        let logits = forward(&mut g, cfg, &batch)?;
        let nv = batch.n_valid();
        if nv > 0 {
            let loss = focal_loss(&mut g, logits, &batch, cfg.focal)?;
            total += g.value(loss).item() * nv as f64;
            weight += nv;
        }
        let probs = probabilities(g.value(logits));
        let preds: Vec<bool> = probs.iter().map(|p| p[1] > p[0]).collect();
        counts = counts + crate::eval::confusion(&preds, &batch.labels, &batch.mask)?;
    }
    Ok((if weight > 0 { total / weight as f64 } else { 0.0 }, counts))
}

/// AdamW with cosine decay and global-norm clipping; keeps the parameters
/// of the best validation epoch and stops after `patience` epochs without
/// improvement.
pub fn train(cfg: &TunConfig, train_set: &[FeatureBundle], val_set: &[FeatureBundle]) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CoreError::InvalidInput("training needs non-empty train and validation splits".into()));
    }
    let mut model = TunModel::new(cfg.clone())?;
    let opt = AdamW { weight_decay: cfg.weight_decay, clip_norm: cfg.clip_norm, ..AdamW::default() };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_epoch = batches(&order, cfg.batch_size).len() as u64;
    let total_steps = per_epoch * cfg.max_epochs as u64;
    let mut best: Option<(f64, usize, TunModel)> = None;
    let mut log = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight) = (0.0, 0usize);
        let mut lr = cfg.lr_max;
        for chunk in batches(&order, cfg.batch_size) {
            let refs: Vec<&FeatureBundle> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::new(&refs, cfg)?;
            let nv = batch.n_valid();
            if nv == 0 {
                continue;
            }
            let step = model.store.step;
            let (grads, updates, loss) = {
                let mut g = Graph::new(&model.store, Mode::Train, step);
                let logits = forward(&mut g, cfg, &batch)?;
                let loss = focal_loss(&mut g, logits, &batch, cfg.focal)?;
                let value = g.value(loss).item();
                let grads = g.backward(loss)?.params();
                (grads, g.into_bn_updates(), value)
            };
            model.store.zero_grads();
            model.store.accumulate(&grads);
            model.store.apply_bn_updates(&updates)?;
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
            model.store.adamw_step(&opt, lr).map_err(|e| match e {
                NnError::NonFiniteGradient { param } => CoreError::NonFiniteGradient { param, epoch, step },
                other => other.into(),
            })?;
            loss_sum += loss * nv as f64;
            weight += nv;
        }
        let (val_loss, counts) = evaluate_loss(&model, val_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: if weight > 0 { loss_sum / weight as f64 } else { 0.0 },
            val_loss,
            val_f1: metrics(counts).f1,
            lr,
        };
        log::info!("epoch {epoch}: train {:.5} val {:.5} f1 {:.4}", entry.train_loss, entry.val_loss, entry.val_f1);
        log.push(entry);
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, log, best_epoch, stopped_early })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    /// Index of the point in the sample's diagram.
    pub index: usize,
    pub birth: f64,
    pub death: f64,
    pub prob_significant: f64,
    pub significant: bool,
}

/// Argmax predictions for the valid rows of each bundle.
pub fn predict(model: &TunModel, bundles: &[FeatureBundle]) -> Result<Vec<Vec<PointPrediction>>> {
    let cfg = &model.cfg;
    let mut out = Vec::with_capacity(bundles.len());
    for chunk in bundles.chunks(cfg.batch_size) {
        let refs: Vec<&FeatureBundle> = chunk.iter().collect();
        let batch = Batch::new(&refs, cfg)?;
        let mut g = Graph::new(&model.store, Mode::Eval, 0);
        let logits = forward(&mut g, cfg, &batch)?;
        let probs = probabilities(g.value(logits));
        for (s, f) in chunk.iter().enumerate() {
            let rows = (0..cfg.n_pd).filter(|&r| f.mask[r]).map(|r| {
                let p = probs[s * cfg.n_pd + r];
                PointPrediction {
                    index: f.source.get(r).copied().unwrap_or(r),
                    birth: f.pd_feats[r][0],
                    death: f.pd_feats[r][1],
                    prob_significant: p[1],
                    significant: p[1] > p[0],
                }
            });
            out.push(rows.collect());
        }
    }
    Ok(out)
}

/// Finite-difference check of the full network and loss on `bundles`,
/// in training mode with dropout disabled.
pub fn gradcheck_network(
    model: &TunModel,
    bundles: &[FeatureBundle],
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let refs: Vec<&FeatureBundle> = bundles.iter().collect();
    let batch = Batch::new(&refs, &model.cfg)?;
    let cfg = model.cfg.clone();
    let opts = CheckOptions { coords, seed, mode: Mode::Train, dropout: false };
    let inner = |g: &mut Graph| -> tun_nn::Result<Var> {
        let logits = forward(g, &cfg, &batch).map_err(|e| NnError::Shape { op: "forward", detail: e.to_string() })?;
        g.focal_loss(logits, &batch.labels, &batch.mask, cfg.focal.into())
    };
    Ok(check_params(&model.store, opts, inner)?)
}
