use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tun_core::baselines::BaselineMethod;
use tun_core::eval::{evaluate, per_sample_csv, render_pd, report_csv};
use tun_core::features::build_bundle;
use tun_core::synth::{cloud_persistence, generate_corpus, Corpus, CorpusSpec, Split};
use tun_core::tun::{log_csv, predict, train, TunModel};

use crate::error::{io_err, CliError, Result};
use crate::io::{read_cloud, read_config, read_input, read_text, write_output};
use crate::pipeline::{baseline_predictions, tun_predictions, BaselineSpec, Subset};

#[derive(Debug, Parser)]
#[command(name = "tun", version, about = "Significant-point detection in one-dimensional persistence diagrams")]
pub struct Cli {
    /// Seed overriding the spec, config or baseline default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for corpus generation and featurization.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Model configuration (JSON); fields left out take the desk defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus.
    Generate(GenerateArgs),
    /// Persistence diagram of a point cloud as `birth,death,dim` CSV.
    Pd(PdArgs),
    /// Feature bundles (one JSON object per sample).
    Featurize(FeaturizeArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Pooled metrics of a checkpoint or a baseline on a corpus split.
    Evaluate(EvaluateArgs),
    /// Run a classical baseline on one sample.
    Baseline(BaselineArgs),
    /// Per-point predictions of a checkpoint on one sample.
    Predict(PredictArgs),
    /// Diagram scatter plot as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Corpus spec (JSON); the desk spec when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PdArgs {
    /// Cloud as `x,y[,z]` CSV or a sample JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// `sample.json`, or `pd.csv` and `cloud.csv`.
    #[arg(long, num_args = 1..=2)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path; the epoch log goes next to it as `.log.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation variant 1-6 applied on top of the configuration.
    #[arg(long)]
    pub ablation: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    #[arg(long, conflicts_with = "method", required_unless_present = "method")]
    pub ckpt: Option<PathBuf>,
    /// Baseline instead of a checkpoint: topk, 2means or cs.
    #[arg(long)]
    pub method: Option<BaselineMethod>,
    /// Fixed k for topk; each sample's Betti number when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    /// Diagram rows scored per sample for baselines (the model's N_pd).
    #[arg(long)]
    pub n_pd: Option<usize>,
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub per_sample: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub method: BaselineMethod,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    #[arg(long, num_args = 1..=2, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, num_args = 1..=2, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, num_args = 1..=2, required = true)]
    pub input: Vec<PathBuf>,
    /// Prediction CSV whose `label_pred` marks points; the sample's own
    /// labels otherwise.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let config = cli.config.as_deref();
    match cli.command {
        Command::Generate(a) => generate(a, cli.seed),
        Command::Pd(a) => pd(a),
        Command::Featurize(a) => featurize(a, config),
        Command::Train(a) => train_cmd(a, config, cli.seed),
        Command::Evaluate(a) => evaluate_cmd(a, config, cli.seed),
        Command::Baseline(a) => baseline(a, cli.seed),
        Command::Predict(a) => predict_cmd(a),
        Command::Render(a) => render(a),
    }
}

fn generate(a: GenerateArgs, seed: Option<u64>) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => CorpusSpec::desk(),
    };
    let seed = seed.or(spec.seed).unwrap_or(0);
    let m = generate_corpus(&spec, seed, &a.out)?;
    println!(
        "{} samples ({} with confounders, {} rejected draws) in {}",
        m.total,
        m.confounders,
        m.rejections,
        a.out.display()
    );
    Ok(())
}

fn pd(a: PdArgs) -> Result<()> {
    let cloud = read_cloud(&a.input)?;
    write_output(a.out.as_deref(), &cloud_persistence(&cloud)?.to_csv())
}

fn featurize(a: FeaturizeArgs, config: Option<&Path>) -> Result<()> {
    let cfg = read_config(config)?;
    let corpus;
    let single;
    let samples = match &a.corpus {
        Some(dir) => {
            corpus = Corpus::load(dir)?;
            match a.split {
                Some(s) => corpus.split(s),
                None => corpus.samples.iter().collect(),
            }
        }
        None => {
            single = read_input(&a.input)?;
            vec![&single]
        }
    };
    let mut out = String::new();
    for s in samples {
        let b = build_bundle(s, cfg.n_pd, cfg.n_pc, cfg.toggles())?;
        out.push_str(&serde_json::to_string(&b).expect("bundles serialize"));
        out.push('\n');
    }
    write_output(a.out.as_deref(), &out)
}

fn train_cmd(a: TrainArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg = read_config(config)?;
    if let Some(k) = a.ablation {
        cfg = cfg.ablation(k)?;
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let corpus = Corpus::load(&a.corpus)?;
    let bundles = |split| {
        corpus
            .split(split)
            .iter()
            .map(|s| build_bundle(s, cfg.n_pd, cfg.n_pc, cfg.toggles()))
            .collect::<tun_core::Result<Vec<_>>>()
    };
    let (tr, va) = (bundles(Split::Train)?, bundles(Split::Val)?);
    let outcome = train(&cfg, &tr, &va)?;
    outcome.model.save(&a.out)?;
    let log_path = a.out.with_extension("log.csv");
    write_output(Some(&log_path), &log_csv(&outcome.log))?;
    println!(
        "best epoch {} of {}{}; checkpoint {}",
        outcome.best_epoch,
        outcome.log.len(),
        if outcome.stopped_early { " (early stop)" } else { "" },
        a.out.display()
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let samples: Vec<_> = corpus.split(a.split).into_iter().filter(|s| a.subset.keeps(s)).collect();
    if samples.is_empty() {
        return Err(CliError::Usage("no samples in the selected split".into()));
    }
    let (method, preds) = match (&a.ckpt, a.method) {
        (Some(ckpt), _) => {
            let model = TunModel::load(ckpt)?;
            ("tun".to_string(), tun_predictions(&model, &samples)?)
        }
        (None, Some(m)) => {
            let spec = baseline_spec(m, a.k, a.level, a.bootstrap, seed);
            let n_pd = match a.n_pd {
                Some(n) => n,
                None => read_config(config)?.n_pd,
            };
            (spec.name(), baseline_predictions(spec, &samples, n_pd)?)
        }
        (None, None) => return Err(CliError::Usage("evaluate needs --ckpt or --method".into())),
    };
    let ev = evaluate(&preds)?;
    if let Some(p) = &a.per_sample {
        write_output(Some(p), &per_sample_csv(&ev.per_sample))?;
    }
    write_output(a.out.as_deref(), &report_csv(&[(a.dataset.clone(), method, ev.report)]))
}

fn baseline_spec(m: BaselineMethod, k: Option<usize>, level: f64, bootstrap: usize, seed: Option<u64>) -> BaselineSpec {
    match m {
        BaselineMethod::Topk => BaselineSpec::Topk { k },
        BaselineMethod::TwoMeans => BaselineSpec::TwoMeans,
        BaselineMethod::ConfidenceSet => BaselineSpec::ConfidenceSet { level, bootstrap, seed: seed.unwrap_or(0) },
    }
}

fn baseline(a: BaselineArgs, seed: Option<u64>) -> Result<()> {
    let sample = read_input(&a.input)?;
    if a.method == BaselineMethod::Topk && a.k.is_none() && sample.labels.is_empty() {
        return Err(CliError::Usage("topk on an unlabeled input needs --k".into()));
    }
    let result = baseline_spec(a.method, a.k, a.level, a.bootstrap, seed).run(&sample)?;
    log::info!("{}", serde_json::to_string(&result.params).expect("params serialize"));
    let mut out = String::from("birth,death,label_pred\n");
    for (p, &l) in sample.diagram.iter().zip(&result.labels) {
        let _ = writeln!(out, "{:?},{:?},{}", p[0], p[1], l as u8);
    }
    write_output(a.out.as_deref(), &out)
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let model = TunModel::load(&a.ckpt)?;
    let cfg = &model.cfg;
    let sample = read_input(&a.input)?;
    if cfg.use_cloud && sample.cloud.is_empty() {
        return Err(CliError::Usage("this checkpoint needs the point cloud; pass cloud.csv or a sample JSON".into()));
    }
    let bundle = build_bundle(&sample, cfg.n_pd, cfg.n_pc, cfg.toggles())?;
    let mut rows = predict(&model, &[bundle])?.pop().unwrap_or_default();
    rows.sort_by_key(|r| r.index);
    let mut out = String::from("birth,death,prob_significant,label_pred\n");
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{:?},{}", r.birth, r.death, r.prob_significant, r.significant as u8);
    }
    write_output(a.out.as_deref(), &out)
}

/// `(birth, death)` pairs marked significant in a prediction CSV.
fn predicted_points(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no `{name}` column", path.display())))
    };
    let (bi, di, li) = (col("birth")?, col("death")?, col("label_pred")?);
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |k: usize| {
            f.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: bad row `{line}`", path.display())))
        };
        if num(li)? != 0.0 {
            out.push([num(bi)?, num(di)?]);
        }
    }
    Ok(out)
}

fn render(a: RenderArgs) -> Result<()> {
    let sample = read_input(&a.input)?;
    let significant = match &a.pred {
        Some(p) => {
            let marked = predicted_points(p)?;
            sample.diagram.iter().map(|q| marked.contains(q)).collect()
        }
        None if sample.labels.len() == sample.diagram.len() => sample.labels.clone(),
        None => vec![false; sample.diagram.len()],
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(render_pd(&sample.diagram, &significant, &a.out)?)
}
