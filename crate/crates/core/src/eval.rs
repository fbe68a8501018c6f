//! Confusion counts, pooled metrics, CSV reports and diagram plots.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub const fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Counts over positions with `mask` set; significant is the positive class.
pub fn confusion(preds: &[bool], labels: &[bool], mask: &[bool]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() || preds.len() != mask.len() {
        return Err(CoreError::Shape(format!(
            "confusion inputs have lengths {}, {}, {}",
            preds.len(),
            labels.len(),
            mask.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &l), _) in preds.iter().zip(labels).zip(mask).filter(|(_, &m)| m) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: ConfusionCounts,
}

/// Precision is NaN without predicted positives, recall NaN without actual
/// positives, and F1 NaN when either is NaN or both are zero.
pub fn metrics(c: ConfusionCounts) -> MetricReport {
    let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let accuracy = ratio(c.tp + c.tn, c.total());
    let f1 = if precision.is_nan() || recall.is_nan() || precision + recall == 0.0 {
        f64::NAN
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricReport { f1, accuracy, precision, recall, counts: c }
}

/// Predictions and ground truth for the evaluated points of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePrediction {
    pub id: String,
    pub preds: Vec<bool>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub per_sample: Vec<(String, ConfusionCounts)>,
}

/// Pools the confusion counts of every sample, then computes metrics once.
pub fn evaluate(samples: &[SamplePrediction]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(CoreError::InvalidInput("nothing to evaluate".into()));
    }
    let per_sample = samples
        .iter()
        .map(|s| Ok((s.id.clone(), confusion(&s.preds, &s.labels, &vec![true; s.preds.len()])?)))
        .collect::<Result<Vec<_>>>()?;
    let report = metrics(per_sample.iter().map(|(_, c)| *c).sum());
    Ok(Evaluation { report, per_sample })
}

pub fn fmt_metric(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

pub const REPORT_HEADER: &str = "dataset,method,f1,acc,pre,rec,tp,tn,fp,fn";

pub fn report_row(dataset: &str, method: &str, r: &MetricReport) -> String {
    let c = r.counts;
    format!(
        "{dataset},{method},{},{},{},{},{},{},{},{}",
        fmt_metric(r.f1),
        fmt_metric(r.accuracy),
        fmt_metric(r.precision),
        fmt_metric(r.recall),
        c.tp,
        c.tn,
        c.fp,
        c.fn_
    )
}

pub fn report_csv(rows: &[(String, String, MetricReport)]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (dataset, method, r) in rows {
        out.push_str(&report_row(dataset, method, r));
        out.push('\n');
    }
    out
}

pub fn per_sample_csv(per_sample: &[(String, ConfusionCounts)]) -> String {
    let mut out = String::from("id,tp,tn,fp,fn\n");
    for (id, c) in per_sample {
        let _ = writeln!(out, "{id},{},{},{},{}", c.tp, c.tn, c.fp, c.fn_);
    }
    out
}

const SVG_SIZE: f64 = 400.0;
const SVG_MARGIN: f64 = 40.0;

/// Birth/death scatter above the diagonal; significant points are filled
/// red, the rest hollow grey.
pub fn render_pd_svg(diagram: &[[f64; 2]], significant: &[bool]) -> String {
    let hi = diagram.iter().flat_map(|p| [p[0], p[1]]).filter(|x| x.is_finite()).fold(0.0, f64::max);
    let hi = if hi > 0.0 { hi * 1.05 } else { 1.0 };
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let x = |v: f64| SVG_MARGIN + v / hi * span;
    let y = |v: f64| SVG_SIZE - SVG_MARGIN - v / hi * span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="black" stroke-width="1"/>"#,
        x(0.0),
        y(0.0),
        x(hi),
        y(hi)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">birth</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.3}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.3})">death</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE / 2.0
    );
    for (i, p) in diagram.iter().enumerate() {
        let sig = significant.get(i).copied().unwrap_or(false);
        let style = if sig { r#"r="5" fill="red" stroke="darkred""# } else { r#"r="3" fill="none" stroke="grey""# };
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" {style}/>"#, x(p[0]), y(p[1]));
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_pd(diagram: &[[f64; 2]], significant: &[bool], path: &Path) -> Result<()> {
    std::fs::write(path, render_pd_svg(diagram, significant)).map_err(io_err(path))
}
