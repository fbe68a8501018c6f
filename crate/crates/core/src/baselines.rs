//! Classical significance rules: top-k persistence, exact two-cluster split
//! of persistence values, and the bootstrap confidence band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{dist, persistence, persistence_order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Topk,
    TwoMeans,
    ConfidenceSet,
}

impl std::str::FromStr for BaselineMethod {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(Self::Topk),
            "2means" | "two_means" => Ok(Self::TwoMeans),
            "cs" | "confidence_set" => Ok(Self::ConfidenceSet),
            _ => Err(CoreError::InvalidInput(format!("unknown baseline {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineParams {
    Topk {
        k: usize,
    },
    /// Cluster means, or `None` when the split is degenerate.
    TwoMeans {
        centers: Option<(f64, f64)>,
    },
    ConfidenceSet {
        level: f64,
        bootstrap: usize,
        seed: u64,
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    pub labels: Vec<bool>,
    pub params: BaselineParams,
}

pub fn topk_baseline(diagram: &[[f64; 2]], k: usize) -> BaselineResult {
    let mut labels = vec![false; diagram.len()];
    for i in persistence_order(diagram).into_iter().take(k) {
        labels[i] = true;
    }
    BaselineResult { method: BaselineMethod::Topk, labels, params: BaselineParams::Topk { k } }
}

fn sse(xs: &[f64]) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (mean, xs.iter().map(|x| (x - mean) * (x - mean)).sum())
}

/// Optimal two-cluster partition of the persistence values, found by
/// scanning every split of the sorted values; the upper cluster is
/// significant.
pub fn two_means_baseline(diagram: &[[f64; 2]]) -> BaselineResult {
    let mut sorted: Vec<f64> = diagram.iter().map(persistence).collect();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    for s in 1..sorted.len() {
        if sorted[s - 1] == sorted[s] {
            continue;
        }
        let cost = sse(&sorted[..s]).1 + sse(&sorted[s..]).1;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, s));
        }
    }
    let (labels, centers) = match best {
        Some((_, s)) => {
            let cut = sorted[s];
            let labels = diagram.iter().map(|p| persistence(p) >= cut).collect();
            (labels, Some((sse(&sorted[..s]).0, sse(&sorted[s..]).0)))
        }
        None => (vec![false; diagram.len()], None),
    };
    BaselineResult { method: BaselineMethod::TwoMeans, labels, params: BaselineParams::TwoMeans { centers } }
}

/// Directed Hausdorff distance from `cloud` to the sub-multiset `subset`.
fn hausdorff_to_subset(cloud: &[[f64; 3]], subset: &[usize]) -> f64 {
    let mut inside = vec![false; cloud.len()];
    for &i in subset {
        inside[i] = true;
    }
    let chosen: Vec<&[f64; 3]> = (0..cloud.len()).filter(|&i| inside[i]).map(|i| &cloud[i]).collect();
    (0..cloud.len())
        .filter(|&i| !inside[i])
        .map(|i| chosen.iter().map(|q| dist(&cloud[i], q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Hausdorff distances between the cloud and `bootstrap` resamples of it.
/// Replicate `b` draws from its own stream of `seed`.
pub fn bootstrap_distances(cloud: &[[f64; 3]], bootstrap: usize, seed: u64) -> Vec<f64> {
    let n = cloud.len();
    (0..bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            hausdorff_to_subset(cloud, &idx)
        })
        .collect()
}

/// Empirical `level` quantile: the smallest value whose empirical CDF
/// reaches `level`.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Points whose persistence exceeds twice the bootstrap quantile `c`.
pub fn confidence_set_baseline(
    diagram: &[[f64; 2]],
    cloud: &[[f64; 3]],
    level: f64,
    bootstrap: usize,
    seed: u64,
) -> Result<BaselineResult> {
    if cloud.is_empty() {
        return Err(CoreError::InvalidInput("confidence set needs a non-empty cloud".into()));
    }
    if bootstrap == 0 {
        return Err(CoreError::InvalidInput("bootstrap count must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CoreError::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    let c = empirical_quantile(&bootstrap_distances(cloud, bootstrap, seed), level);
    let labels = diagram.iter().map(|p| persistence(p) > 2.0 * c).collect();
    Ok(BaselineResult {
        method: BaselineMethod::ConfidenceSet,
        labels,
        params: BaselineParams::ConfidenceSet { level, bootstrap, seed, c },
    })
}
