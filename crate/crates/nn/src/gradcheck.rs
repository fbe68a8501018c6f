//! Central finite-difference checks of reverse-mode gradients, and a suite
//! covering every operation of the engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{FocalParams, Graph, Mode, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely: the relative error
/// is `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: (String, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub coords: usize,
    pub seed: u64,
    /// Graph mode; training mode uses batch statistics.
    pub mode: Mode,
    /// Keep dropout active (its masks are fixed by the graph step).
    pub dropout: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { coords: 50, seed: 0, mode: Mode::Train, dropout: false }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the backward pass of `f` against central differences on
/// `opts.coords` parameter coordinates drawn uniformly over all parameters.
pub fn check_params<F>(store: &ParamStore, opts: CheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    fn graph(s: &ParamStore, opts: CheckOptions) -> Graph<'_> {
        let g = Graph::new(s, opts.mode, 0);
        if opts.dropout {
            g
        } else {
            g.without_dropout()
        }
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = graph(s, opts);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };
    let analytic = {
        let mut g = graph(store, opts);
        let out = f(&mut g)?;
        g.backward(out)?.params()
    };
    let total = store.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: (String::new(), 0) };
    let mut probe = store.clone();
    for _ in 0..opts.coords.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut p = 0;
        while flat >= store.params()[p].value.len() {
            flat -= store.params()[p].value.len();
            p += 1;
        }
        let x0 = store.params()[p].value.data()[flat];
        probe.params_mut()[p].value.data_mut()[flat] = x0 + FD_STEP;
        let up = eval(&probe)?;
        probe.params_mut()[p].value.data_mut()[flat] = x0 - FD_STEP;
        let down = eval(&probe)?;
        probe.params_mut()[p].value.data_mut()[flat] = x0;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[p].as_ref().map_or(0.0, |g| g[flat]);
        let e = rel_err(a, numeric);
        if report.checked == 0 || e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = (store.params()[p].name.clone(), flat);
        }
        report.checked += 1;
    }
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// Store with one random parameter per `(name, shape)`.
pub fn random_store(seed: u64, inputs: &[(&str, &[usize])]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new(seed);
    for (name, shape) in inputs {
        s.add_param(name, random_tensor(&mut rng, shape)).expect("distinct names");
    }
    s
}

fn probe_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Reduces `y` to a scalar with fixed random weights.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = probe_weights(seed, g.value(y).len());
    g.weighted_sum(y, &w)
}

/// Runs a gradient check for every operation of the engine.
pub fn check_all_ops(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let opts = CheckOptions { seed, ..CheckOptions::default() };
    let mut out = Vec::new();
    let (b, n, c) = (2usize, 5usize, 6usize);
    // Padded rows sit at the end of the second sample.
    let mask: Vec<bool> = (0..b * n).map(|i| i < n || i % n < 3).collect();

    let s = random_store(seed, &[("x", &[b, n, c]), ("w", &[c, 4])]);
    out.push((
        "matmul",
        check_params(&s, opts, |g| {
            let (x, w) = (g.param("x")?, g.param("w")?);
            let y = g.matmul(x, w)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b * n, c]), ("b", &[c])]);
    out.push((
        "add_bias",
        check_params(&s, opts, |g| {
            let (x, bb) = (g.param("x")?, g.param("b")?);
            let y = g.add_bias(x, bb)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b, n, c]), ("y", &[b, n, c])]);
    out.push((
        "add",
        check_params(&s, opts, |g| {
            let (x, y) = (g.param("x")?, g.param("y")?);
            let z = g.add(x, y)?;
            probe(g, z, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b, n, c])]);
    out.push((
        "relu",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            let y = g.relu(x)?;
            probe(g, y, seed)
        })?,
    ));

    for (name, masked, mode) in [
        ("batchnorm_train", false, Mode::Train),
        ("batchnorm_train_masked", true, Mode::Train),
        ("batchnorm_eval", false, Mode::Eval),
    ] {
        let mut s = random_store(seed, &[("x", &[b, n, c])]);
        s.add_batchnorm("bn", c)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for p in s.params_mut().iter_mut().filter(|p| p.name.starts_with("bn.")) {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        s.buffer_mut("bn.running_mean")?.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        s.buffer_mut("bn.running_var")?.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
        let mask = mask.clone();
        let opts = CheckOptions { mode, ..opts };
        out.push((
            name,
            check_params(&s, opts, move |g| {
                let x = g.param("x")?;
                let y = g.batchnorm(x, "bn", masked.then_some(&mask[..]))?;
                probe(g, y, seed)
            })?,
        ));
    }

    let s = random_store(seed, &[("x", &[b, n, c])]);
    out.push((
        "dropout",
        check_params(&s, CheckOptions { dropout: true, ..opts }, |g| {
            let x = g.param("x")?;
            let y = g.dropout(x, 0.3, 7)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b * n, c])]);
    out.push((
        "softmax",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            let y = g.softmax(x)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b, n, c])]);
    out.push((
        "mean_pool",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            let y = g.mean_pool(x, &mask)?;
            probe(g, y, seed)
        })?,
    ));
    out.push((
        "max_pool",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            let y = g.max_pool(x)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b, n, c]), ("y", &[b, n, 3])]);
    out.push((
        "concat",
        check_params(&s, opts, |g| {
            let (x, y) = (g.param("x")?, g.param("y")?);
            let z = g.concat(x, y)?;
            probe(g, z, seed)
        })?,
    ));

    let s = random_store(seed, &[("x", &[b, 30])]);
    out.push((
        "broadcast_rows",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            let y = g.broadcast_rows(x, n)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("q", &[b, n, 8]), ("k", &[b, n, 8]), ("v", &[b, n, 8])]);
    out.push((
        "attention",
        check_params(&s, opts, |g| {
            let (q, k, v) = (g.param("q")?, g.param("k")?, g.param("v")?);
            let y = g.attention(q, k, v, &mask, 2)?;
            probe(g, y, seed)
        })?,
    ));

    let mut s = random_store(seed, &[("x", &[b, n, 8])]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for p in ["q", "k", "v", "o"] {
        s.add_linear(&format!("mha.{p}"), 8, 8, &mut rng)?;
    }
    out.push((
        "multihead_attention",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            let y = g.multihead_attention(x, "mha", &mask, 4)?;
            probe(g, y, seed)
        })?,
    ));

    let s = random_store(seed, &[("s", &[b, 15, 2])]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let labels: Vec<bool> = (0..b * 15).map(|_| rng.random_bool(0.4)).collect();
    let fmask: Vec<bool> = (0..b * 15).map(|i| i % 15 < 12).collect();
    let fp = FocalParams { alpha: 0.8, gamma: 2.0, w0: 1.0, w1: 2.0 };
    out.push((
        "focal_loss",
        check_params(&s, opts, |g| {
            let x = g.param("s")?;
            g.focal_loss(x, &labels, &fmask, fp)
        })?,
    ));

    let s = random_store(seed, &[("x", &[60])]);
    out.push((
        "weighted_sum",
        check_params(&s, opts, |g| {
            let x = g.param("x")?;
            probe(g, x, seed)
        })?,
    ));
    Ok(out)
}
