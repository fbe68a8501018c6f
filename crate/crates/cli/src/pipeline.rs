//! Predictions of the model and the baselines on corpus samples, restricted
//! to the diagram rows the model sees.

use rayon::prelude::*;
use tun_core::baselines::{confidence_set_baseline, topk_baseline, two_means_baseline, BaselineResult};
use tun_core::eval::SamplePrediction;
use tun_core::features::{build_bundle, persistence_order};
use tun_core::synth::LabeledSample;
use tun_core::tun::{predict, TunModel};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineSpec {
    /// Fixed `k`, or each sample's own Betti number when `None`.
    Topk {
        k: Option<usize>,
    },
    TwoMeans,
    /// Bootstrap streams are seeded with `seed` XOR the sample's own seed.
    ConfidenceSet {
        level: f64,
        bootstrap: usize,
        seed: u64,
    },
}

impl BaselineSpec {
    /// Method column of the report.
    pub fn name(&self) -> String {
        match self {
            BaselineSpec::Topk { k: Some(k) } => format!("top{k}"),
            BaselineSpec::Topk { k: None } => "topk_beta1".into(),
            BaselineSpec::TwoMeans => "2means".into(),
            BaselineSpec::ConfidenceSet { level, .. } => format!("cs({level})"),
        }
    }

    pub fn run(&self, sample: &LabeledSample) -> Result<BaselineResult> {
        Ok(match *self {
            BaselineSpec::Topk { k } => topk_baseline(&sample.diagram, k.unwrap_or(sample.meta.beta1)),
            BaselineSpec::TwoMeans => two_means_baseline(&sample.diagram),
            BaselineSpec::ConfidenceSet { level, bootstrap, seed } => {
                if sample.cloud.is_empty() {
                    return Err(CliError::Usage(format!("sample `{}` has no cloud for the confidence set", sample.id)));
                }
                confidence_set_baseline(&sample.diagram, &sample.cloud, level, bootstrap, seed ^ sample.meta.seed)?
            }
        })
    }
}

/// Diagram indices of the `n_pd` most persistent points, in row order.
pub fn retained_rows(sample: &LabeledSample, n_pd: usize) -> Vec<usize> {
    let mut order = persistence_order(&sample.diagram);
    order.truncate(n_pd);
    order
}

fn labeled(sample: &LabeledSample) -> Result<()> {
    if sample.labels.len() != sample.diagram.len() {
        return Err(CliError::Usage(format!("sample `{}` is not labeled", sample.id)));
    }
    Ok(())
}

/// Runs the baseline on each full diagram, then keeps the retained rows.
pub fn baseline_predictions(
    spec: BaselineSpec,
    samples: &[&LabeledSample],
    n_pd: usize,
) -> Result<Vec<SamplePrediction>> {
    samples
        .par_iter()
        .map(|s| {
            labeled(s)?;
            let full = spec.run(s)?.labels;
            let rows = retained_rows(s, n_pd);
            Ok(SamplePrediction {
                id: s.id.clone(),
                preds: rows.iter().map(|&i| full[i]).collect(),
                labels: rows.iter().map(|&i| s.labels[i]).collect(),
            })
        })
        .collect()
}

pub fn tun_predictions(model: &TunModel, samples: &[&LabeledSample]) -> Result<Vec<SamplePrediction>> {
    let cfg = &model.cfg;
    let bundles = samples
        .par_iter()
        .map(|s| {
            labeled(s)?;
            Ok(build_bundle(s, cfg.n_pd, cfg.n_pc, cfg.toggles())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = predict(model, &bundles)?;
    Ok(samples
        .iter()
        .zip(out)
        .map(|(s, rows)| SamplePrediction {
            id: s.id.clone(),
            preds: rows.iter().map(|p| p.significant).collect(),
            labels: rows.iter().map(|p| s.labels[p.index]).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Subset {
    #[default]
    All,
    /// Samples with an outlier ring.
    Confounder,
    Clean,
}

impl Subset {
    pub fn keeps(self, s: &LabeledSample) -> bool {
        match self {
            Subset::All => true,
            Subset::Confounder => s.meta.confounder,
            Subset::Clean => !s.meta.confounder,
        }
    }
}
