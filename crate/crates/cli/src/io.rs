//! Reading clouds, diagrams and samples from disk, and writing outputs.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tun_core::synth::{cloud_diagram, LabeledSample, SampleMeta, ShapeKind};
use tun_core::tun::TunConfig;

use crate::error::{io_err, CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes to `path`, or to stdout when no path is given.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            std::fs::write(p, text).map_err(io_err(p))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parses `x,y[,z]` rows. A header line is optional; two-column rows get
/// z = 0.
pub fn parse_cloud_csv(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match nums {
            Some(v) if v.len() == 2 || v.len() == 3 => out.push([v[0], v[1], v.get(2).copied().unwrap_or(0.0)]),
            None if out.is_empty() && fields.first().is_some_and(|f| f.eq_ignore_ascii_case("x")) => {}
            _ => return Err(CliError::Usage(format!("cloud CSV line {}: expected x,y[,z], got `{line}`", n + 1))),
        }
    }
    if out.iter().flatten().any(|c| !c.is_finite()) {
        return Err(CliError::Usage("cloud CSV contains non-finite coordinates".into()));
    }
    Ok(out)
}

pub fn read_cloud(path: &Path) -> Result<Vec<[f64; 3]>> {
    if is_json(path) {
        return Ok(read_sample(path)?.cloud);
    }
    parse_cloud_csv(&read_text(path)?)
}

/// One-dimensional `(birth, death)` points of a `birth,death[,dim]` CSV.
pub fn read_diagram_csv(path: &Path) -> Result<Vec<[f64; 2]>> {
    let points = tun_topo::persistence::points_from_csv(&read_text(path)?)?;
    Ok(points.iter().filter(|p| p.dim == 1).map(|p| [p.birth, p.death]).collect())
}

#[derive(Deserialize)]
struct SampleFile {
    #[serde(default)]
    id: String,
    #[serde(default)]
    cloud: Vec<[f64; 3]>,
    diagram: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    labels: Vec<bool>,
    meta: Option<SampleMeta>,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn unlabeled_meta(n_points: usize) -> SampleMeta {
    // Only the seed is read downstream; the shape kind is unknown.
    SampleMeta { beta1: 0, shape_kind: ShapeKind::Circle, noise_sigma: 0.0, n_points, seed: 0, confounder: false }
}

/// A sample JSON object: a corpus line, or any object with a `cloud` and
/// optionally a `diagram` and `labels`. A missing diagram is computed.
pub fn read_sample(path: &Path) -> Result<LabeledSample> {
    let text = read_text(path)?;
    let f: SampleFile = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let diagram = match f.diagram {
        Some(d) => d,
        None if f.cloud.is_empty() => {
            return Err(CliError::Usage(format!("{}: sample has neither cloud nor diagram", path.display())))
        }
        None => cloud_diagram(&f.cloud)?,
    };
    if !f.labels.is_empty() && f.labels.len() != diagram.len() {
        return Err(CliError::Usage(format!(
            "{}: {} labels for {} diagram points",
            path.display(),
            f.labels.len(),
            diagram.len()
        )));
    }
    let meta = f.meta.unwrap_or_else(|| unlabeled_meta(f.cloud.len()));
    Ok(LabeledSample { id: f.id, cloud: f.cloud, diagram, labels: f.labels, meta })
}

/// `sample.json`, or `pd.csv` optionally followed by `cloud.csv`.
pub fn read_input(paths: &[PathBuf]) -> Result<LabeledSample> {
    match paths {
        [p] if is_json(p) => read_sample(p),
        [pd] => {
            let diagram = read_diagram_csv(pd)?;
            Ok(LabeledSample { id: stem(pd), cloud: Vec::new(), diagram, labels: Vec::new(), meta: unlabeled_meta(0) })
        }
        [pd, cloud] => {
            let diagram = read_diagram_csv(pd)?;
            let cloud = read_cloud(cloud)?;
            let meta = unlabeled_meta(cloud.len());
            Ok(LabeledSample { id: stem(pd), cloud, diagram, labels: Vec::new(), meta })
        }
        _ => Err(CliError::Usage("--input takes sample.json, or pd.csv and an optional cloud.csv".into())),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Model configuration from a JSON file; missing fields take the desk
/// defaults.
pub fn read_config(path: Option<&Path>) -> Result<TunConfig> {
    let Some(path) = path else {
        return Ok(TunConfig::desk());
    };
    let cfg: TunConfig =
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
