use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tun_core::features::{build_bundle, FeatureBundle};
use tun_core::synth::{build_corpus, CorpusSpec, ShapeKind};
use tun_core::tun::*;
use tun_core::CoreError;
use tun_nn::{FocalParams, Graph, Mode, Tensor};

fn small_cfg() -> TunConfig {
    TunConfig { n_pc: 64, max_epochs: 3, ..TunConfig::desk() }
}

fn bundles(cfg: &TunConfig, n: usize) -> Vec<FeatureBundle> {
    let mut spec: CorpusSpec = serde_json::from_str("{}").unwrap();
    spec.counts = [(ShapeKind::Circle, n.div_ceil(2)), (ShapeKind::FigureEight, n / 2)].into_iter().collect();
    spec.confounder_rate = 0.5;
    let (samples, _) = build_corpus(&spec, 3).unwrap();
    samples.iter().map(|s| build_bundle(s, cfg.n_pd, cfg.n_pc, cfg.toggles()).unwrap()).collect()
}

fn eval_logits(model: &TunModel, cfg: &TunConfig, b: &[&FeatureBundle]) -> Vec<f64> {
    let batch = Batch::new(b, cfg).unwrap();
    let mut g = Graph::new(&model.store, Mode::Eval, 0);
    let logits = forward(&mut g, cfg, &batch).unwrap();
    assert_eq!(g.value(logits).shape(), [b.len(), cfg.n_pd, 2]);
    g.value(logits).data().to_vec()
}

#[test]
fn logits_shape_and_duplicate_samples() {
    let cfg = TunConfig::desk();
    let data = bundles(&cfg, 2);
    let model = TunModel::new(cfg.clone()).unwrap();
    let out = eval_logits(&model, &cfg, &[&data[0], &data[0]]);
    let n = cfg.n_pd * 2;
    assert_eq!(out.len(), 2 * n);
    assert_eq!(out[..n], out[n..]);
}

#[test]
fn permuting_valid_rows_permutes_logits() {
    let cfg = small_cfg();
    let data = bundles(&cfg, 2);
    let model = TunModel::new(cfg.clone()).unwrap();
    let b = &data[0];
    let nv = b.n_valid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut perm: Vec<usize> = (0..nv).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    let mut p = b.clone();
    for (dst, &src) in perm.iter().enumerate() {
        p.pd_feats[dst] = b.pd_feats[src];
        p.labels.as_mut().unwrap()[dst] = b.labels.as_ref().unwrap()[src];
    }
    let x = eval_logits(&model, &cfg, &[b, &data[1]]);
    let y = eval_logits(&model, &cfg, &[&p, &data[1]]);
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..2 {
            let (a, z) = (x[src * 2 + c], y[dst * 2 + c]);
            assert!((a - z).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {z}");
        }
    }
}

#[test]
fn padding_does_not_change_the_loss() {
    let cfg = small_cfg();
    let data = bundles(&cfg, 2);
    let model = TunModel::new(cfg.clone()).unwrap();
    let wide = TunConfig { n_pd: cfg.n_pd + 9, ..cfg.clone() };
    let widen = |b: &FeatureBundle| {
        let mut w = b.clone();
        w.pd_feats.resize(wide.n_pd, [0.0; 4]);
        w.mask.resize(wide.n_pd, false);
        w.labels.as_mut().unwrap().resize(wide.n_pd, false);
        w
    };
    let padded: Vec<FeatureBundle> = data.iter().map(widen).collect();
    for mode in [Mode::Eval, Mode::Train] {
        let loss = |c: &TunConfig, d: &[FeatureBundle]| {
            let refs: Vec<&FeatureBundle> = d.iter().collect();
            let batch = Batch::new(&refs, c).unwrap();
            let mut g = Graph::new(&model.store, mode, 5);
            let logits = forward(&mut g, c, &batch).unwrap();
            let l = focal_loss(&mut g, logits, &batch, c.focal).unwrap();
            g.value(l).item()
        };
        assert_eq!(loss(&cfg, &data), loss(&wide, &padded), "{mode:?}");
    }
}

fn random_focal(gamma: f64, w1: f64, seed: u64, rows: usize) -> (Vec<f64>, Vec<bool>, Vec<bool>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-4.0..4.0)).collect();
    let labels: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.3)).collect();
    let mut mask: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.8)).collect();
    mask[0] = true;
    let store = tun_nn::ParamStore::new(0);
    let mut g = Graph::new(&store, Mode::Eval, 0);
    let x = g.constant(Tensor::new(&[1, rows, 2], logits.clone()).unwrap()).unwrap();
    let fp = FocalParams { alpha: 1.0, gamma, w0: 1.0, w1 };
    let l = g.focal_loss(x, &labels, &mask, fp).unwrap();
    let v = g.value(l).item();
    (logits, labels, mask, v)
}

#[test]
fn zero_gamma_focal_is_cross_entropy() {
    for seed in 0..100 {
        let (logits, labels, mask, v) = random_focal(0.0, 1.0, seed, 12);
        let (mut sum, mut n) = (0.0, 0.0);
        for r in (0..12).filter(|&r| mask[r]) {
            let (a, b) = (logits[2 * r], logits[2 * r + 1]);
            let lse = a.max(b) + ((a - a.max(b)).exp() + (b - a.max(b)).exp()).ln();
            sum += lse - if labels[r] { b } else { a };
            n += 1.0;
        }
        assert!((v - sum / n).abs() <= 1e-12, "seed {seed}: {v} vs {}", sum / n);
    }
}

#[test]
fn larger_positive_weight_never_lowers_positive_loss() {
    let store = tun_nn::ParamStore::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let logits = vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let loss = |w1: f64| {
            let mut g = Graph::new(&store, Mode::Eval, 0);
            let x = g.constant(Tensor::new(&[1, 1, 2], logits.clone()).unwrap()).unwrap();
            let l = g.focal_loss(x, &[true], &[true], FocalParams { alpha: 1.0, gamma: 2.0, w0: 1.0, w1 }).unwrap();
            g.value(l).item()
        };
        assert!(loss(3.0) >= loss(2.0));
    }
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let cfg = TunConfig::desk();
    let data = bundles(&cfg, 2);
    let model = TunModel::new(cfg).unwrap();
    let report = gradcheck_network(&model, &data, 60, 9).unwrap();
    assert!(report.checked >= 50);
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn single_sample_is_memorized() {
    // Batch statistics of a single sample are degenerate, so memorization is
    // judged on the training loss with dropout off.
    let cfg = TunConfig {
        n_pc: 32,
        max_epochs: 300,
        patience: 300,
        dropout_pd: 0.0,
        dropout_fusion: 0.0,
        dropout_clf1: 0.0,
        dropout_clf2: 0.0,
        ..TunConfig::desk()
    };
    let data = bundles(&cfg, 1);
    let out = train(&cfg, &data, &data).unwrap();
    let last = out.log.last().unwrap().train_loss;
    assert!(last < 1e-3, "loss {last}");
}

#[test]
fn training_is_deterministic() {
    let cfg = small_cfg();
    let data = bundles(&cfg, 6);
    let (tr, va) = data.split_at(4);
    let a = train(&cfg, tr, va).unwrap();
    let b = train(&cfg, tr, va).unwrap();
    assert_eq!(log_csv(&a.log), log_csv(&b.log));
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    a.model.save(&pa).unwrap();
    b.model.save(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = small_cfg();
    let data = bundles(&cfg, 2);
    let model = TunModel::new(cfg.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = TunModel::load(&path).unwrap();
    assert_eq!(predict(&model, &data).unwrap(), predict(&back, &data).unwrap());

    // Tensors from one architecture stored under another's configuration.
    let other = TunModel::new(TunConfig { hidden: 32, ..cfg.clone() }).unwrap();
    let mixed = dir.path().join("x.ckpt");
    tun_nn::checkpoint::save(&mixed, &other.store, &serde_json::to_string(&cfg).unwrap()).unwrap();
    assert!(matches!(TunModel::load(&mixed), Err(CoreError::IncompatibleCheckpoint(_))));
    std::fs::write(&mixed, b"not a checkpoint").unwrap();
    assert!(matches!(TunModel::load(&mixed), Err(CoreError::IncompatibleCheckpoint(_))));
    assert!(matches!(TunModel::load(&dir.path().join("missing")), Err(CoreError::Io { .. })));
}

#[test]
fn all_padding_sample_predicts_nothing() {
    let cfg = small_cfg();
    let mut data = bundles(&cfg, 2);
    data[0].pd_feats.iter_mut().for_each(|r| *r = [0.0; 4]);
    data[0].mask.iter_mut().for_each(|m| *m = false);
    data[0].labels.as_mut().unwrap().iter_mut().for_each(|l| *l = false);
    let model = TunModel::new(cfg).unwrap();
    let out = predict(&model, &data).unwrap();
    assert!(out[0].is_empty());
    assert_eq!(out[1].len(), data[1].n_valid());
    assert!(out[1]
        .iter()
        .all(|p| (0.0..=1.0).contains(&p.prob_significant) && p.significant == (p.prob_significant > 0.5)));
}

#[test]
fn every_ablation_builds_and_runs() {
    let base = small_cfg();
    for k in 1..=6 {
        let cfg = base.clone().ablation(k).unwrap();
        let data = bundles(&cfg, 2);
        let model = TunModel::new(cfg.clone()).unwrap();
        let refs: Vec<&FeatureBundle> = data.iter().collect();
        eval_logits(&model, &cfg, &refs);
    }
}
