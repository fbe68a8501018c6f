//! Synthetic labeled corpus: planar and spatial shapes with known first
//! Betti number, optional outlier-ring confounders, and labels derived from
//! the computed diagram.
//!
//! A diagram point is a candidate when it is born by `τ = 3 ×` the mean
//! nearest-neighbour spacing of the cloud. The `β₁` most persistent
//! candidates are significant, and a sample is only accepted when they beat
//! every other candidate by a factor of 1.5 in persistence.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tun_topo::{alpha_filtration_2d, cone_radius, persistence_diagram, rips_filtration, PersistenceDiagram, RipsCap};

use crate::error::{io_err, json_err, CoreError, Result};
use crate::features::{dedup_cloud, mean_knn_distances, persistence_order};

pub const TAU_FACTOR: f64 = 3.0;
pub const MARGIN: f64 = 1.5;
pub const MAX_ATTEMPTS: usize = 50;
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    #[serde(rename = "circle")]
    Circle,
    #[serde(rename = "ellipse")]
    Ellipse,
    #[serde(rename = "k_circles")]
    KCircles,
    #[serde(rename = "annulus")]
    Annulus,
    #[serde(rename = "figure_eight")]
    FigureEight,
    #[serde(rename = "filled_disk")]
    FilledDisk,
    #[serde(rename = "torus_3d")]
    Torus3d,
    #[serde(rename = "sphere_3d")]
    Sphere3d,
    #[serde(rename = "circle_3d")]
    Circle3d,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 9] = [
        ShapeKind::Circle,
        ShapeKind::Ellipse,
        ShapeKind::KCircles,
        ShapeKind::Annulus,
        ShapeKind::FigureEight,
        ShapeKind::FilledDisk,
        ShapeKind::Torus3d,
        ShapeKind::Sphere3d,
        ShapeKind::Circle3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::KCircles => "k_circles",
            ShapeKind::Annulus => "annulus",
            ShapeKind::FigureEight => "figure_eight",
            ShapeKind::FilledDisk => "filled_disk",
            ShapeKind::Torus3d => "torus_3d",
            ShapeKind::Sphere3d => "sphere_3d",
            ShapeKind::Circle3d => "circle_3d",
        }
    }

    pub fn is_planar(self) -> bool {
        !matches!(self, ShapeKind::Torus3d | ShapeKind::Sphere3d | ShapeKind::Circle3d)
    }
}

/// Distant, sparsely sampled ring whose loop is born after `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfounderSpec {
    /// Ring radius over shape size.
    pub radius_factor: f64,
    /// Ring edge length over the `τ` of the bare shape.
    pub spacing_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    /// Outer radius of the shape (major radius for the torus).
    pub size: f64,
    pub n_points: usize,
    pub noise_sigma: f64,
    /// Number of circles for `k_circles`.
    pub k: usize,
    /// Minor over major axis (ellipse), inner over outer radius (annulus)
    /// or tube over major radius (torus).
    pub aspect: f64,
    pub confounder: Option<ConfounderSpec>,
}

impl ShapeParams {
    pub fn new(size: f64, n_points: usize) -> Self {
        Self { size, n_points, noise_sigma: 0.0, k: 3, aspect: 0.5, confounder: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedShape {
    pub cloud: Vec<[f64; 3]>,
    pub beta1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub beta1: usize,
    pub shape_kind: ShapeKind,
    pub noise_sigma: f64,
    pub n_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub confounder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub cloud: Vec<[f64; 3]>,
    /// Finite one-dimensional diagram as `(birth, death)` pairs.
    pub diagram: Vec<[f64; 2]>,
    pub labels: Vec<bool>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reject {
    TooFewCandidates { candidates: usize, beta1: usize },
    NoMargin,
}

fn check_params(kind: ShapeKind, p: &ShapeParams) -> Result<()> {
    let bad = |msg: String| Err(CoreError::InvalidInput(format!("{}: {msg}", kind.name())));
    if !(p.size.is_finite() && p.size > 0.0) {
        return bad(format!("size must be positive, got {}", p.size));
    }
    if !(p.noise_sigma.is_finite() && p.noise_sigma >= 0.0) {
        return bad(format!("noise sigma must be non-negative, got {}", p.noise_sigma));
    }
    if p.n_points < 8 {
        return bad(format!("need at least 8 points, got {}", p.n_points));
    }
    if kind == ShapeKind::KCircles && !(1..=6).contains(&p.k) {
        return bad(format!("k must lie in 1..=6, got {}", p.k));
    }
    if matches!(kind, ShapeKind::Ellipse | ShapeKind::Annulus | ShapeKind::Torus3d)
        && !(p.aspect > 0.05 && p.aspect < 0.95)
    {
        return bad(format!("aspect must lie in (0.05, 0.95), got {}", p.aspect));
    }
    if let Some(c) = p.confounder {
        if !(c.radius_factor > 0.0 && c.spacing_factor > 0.0) {
            return bad("confounder factors must be positive".into());
        }
    }
    Ok(())
}

/// `n` angles in `[0, 2π)`, one uniformly placed in each of `n` equal sectors.
fn stratified_angles(n: usize, rng: &mut ChaCha8Rng) -> impl Iterator<Item = f64> + '_ {
    let phase: f64 = rng.random_range(0.0..TAU);
    (0..n).map(move |i| phase + TAU * (i as f64 + rng.random_range(0.0..1.0)) / n as f64)
}

fn circle_points(center: [f64; 2], r: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    stratified_angles(n, rng)
        .collect::<Vec<_>>()
        .into_iter()
        .map(|t| [center[0] + r * t.cos(), center[1] + r * t.sin(), 0.0])
        .collect()
}

fn disk_points(r_in: f64, r_out: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let r = rng.random_range(r_in * r_in..r_out * r_out).sqrt();
            let t = rng.random_range(0.0..TAU);
            [r * t.cos(), r * t.sin(), 0.0]
        })
        .collect()
}

/// Greedy farthest-point subset of size `n`, starting from a random point.
pub fn farthest_point_sample(candidates: &[[f64; 3]], n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    if candidates.len() <= n {
        return candidates.to_vec();
    }
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
    let mut nearest = vec![f64::INFINITY; candidates.len()];
    let mut cur = rng.random_range(0..candidates.len());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(candidates[cur]);
        let mut best = (0, -1.0);
        for (i, c) in candidates.iter().enumerate() {
            nearest[i] = nearest[i].min(d2(c, &candidates[cur]));
            if nearest[i] > best.1 {
                best = (i, nearest[i]);
            }
        }
        cur = best.0;
    }
    out
}

const FPS_OVERSAMPLE: usize = 12;

fn torus_points(big_r: f64, r: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut cand = Vec::with_capacity(n * FPS_OVERSAMPLE);
    while cand.len() < n * FPS_OVERSAMPLE {
        let (u, v) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
        // Accept with probability proportional to the area element.
        if rng.random_range(0.0..big_r + r) <= big_r + r * v.cos() {
            let w = big_r + r * v.cos();
            cand.push([w * u.cos(), w * u.sin(), r * v.sin()]);
        }
    }
    farthest_point_sample(&cand, n, rng)
}

fn sphere_points(r: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let cand: Vec<[f64; 3]> = (0..n * FPS_OVERSAMPLE)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let t = rng.random_range(0.0..TAU);
            let s = (1.0 - z * z).sqrt();
            [r * s * t.cos(), r * s * t.sin(), r * z]
        })
        .collect();
    farthest_point_sample(&cand, n, rng)
}

/// Uniformly random rotation of `p` (quaternion from three uniforms).
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(m: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2])
}

fn add_noise(cloud: &mut [[f64; 3]], sigma: f64, planar: bool, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let axes = if planar { 2 } else { 3 };
    for p in cloud {
        for c in p.iter_mut().take(axes) {
            *c += normal.sample(rng);
        }
    }
}

/// `τ` of a cloud: three times its mean nearest-neighbour distance.
pub fn birth_threshold(cloud: &[[f64; 3]]) -> f64 {
    let pts = dedup_cloud(cloud);
    if pts.len() < 2 {
        return 0.0;
    }
    let nn = mean_knn_distances(&pts, 1);
    TAU_FACTOR * nn.iter().sum::<f64>() / nn.len() as f64
}

fn extent_radius(cloud: &[[f64; 3]]) -> f64 {
    cloud.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max)
}

/// Appends a ring far from the shape whose edge length keeps its loop born
/// after the final `τ`, growing the spacing as the ring's own sparse points
/// raise that threshold.
fn add_confounder(
    cloud: &mut Vec<[f64; 3]>,
    spec: ConfounderSpec,
    p: &ShapeParams,
    planar: bool,
    rng: &mut ChaCha8Rng,
) {
    let tau0 = birth_threshold(cloud);
    let reach = extent_radius(cloud);
    let mut rc = spec.radius_factor * p.size;
    let mut edge = spec.spacing_factor * tau0;
    let base_len = cloud.len();
    let rot = if planar { None } else { Some(random_rotation(rng)) };
    let dir = rng.random_range(0.0..TAU);
    for _ in 0..64 {
        let m = ((PI / (edge / (2.0 * rc)).min(1.0).asin()).floor() as usize).max(3);
        if m < 6 {
            rc *= 1.25;
            continue;
        }
        let gap = if planar { rc + reach } else { 3.0 * rc + reach };
        let center = [gap * dir.cos(), gap * dir.sin(), 0.0];
        cloud.truncate(base_len);
        let jitter = 0.05 / m as f64;
        let phase: f64 = rng.random_range(0.0..TAU);
        for i in 0..m {
            let t = phase + TAU * (i as f64 / m as f64 + rng.random_range(-jitter..jitter));
            let local = [rc * t.cos(), rc * t.sin(), 0.0];
            let local = rot.map_or(local, |r| rotate(&r, local));
            cloud.push([center[0] + local[0], center[1] + local[1], center[2] + local[2]]);
        }
        let actual_edge = 2.0 * rc * (PI / m as f64).sin();
        if actual_edge / 2.0 > 1.25 * birth_threshold(cloud) {
            return;
        }
        edge = actual_edge * 1.2;
    }
}

/// Point cloud of `kind` (planar kinds lie in `z = 0`) and its `β₁`.
pub fn generate_shape(kind: ShapeKind, p: &ShapeParams, seed: u64) -> Result<GeneratedShape> {
    check_params(kind, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, n) = (p.size, p.n_points);
    let (mut cloud, beta1) = match kind {
        ShapeKind::Circle => (circle_points([0.0, 0.0], s, n, &mut rng), 1),
        ShapeKind::Ellipse => {
            let b = s * p.aspect;
            let pts = stratified_angles(n, &mut rng).collect::<Vec<_>>();
            (pts.into_iter().map(|t| [s * t.cos(), b * t.sin(), 0.0]).collect(), 1)
        }
        ShapeKind::KCircles => {
            let radii: Vec<f64> = (0..p.k).map(|_| s * rng.random_range(0.35..0.6)).collect();
            let total: f64 = radii.iter().sum();
            let mut pts = Vec::with_capacity(n);
            let mut x = 0.0;
            for (j, &r) in radii.iter().enumerate() {
                let nj = ((n as f64 * r / total).round() as usize).max(8);
                if j > 0 {
                    x += radii[j - 1] + r + s * rng.random_range(0.3..0.6);
                }
                let y = s * rng.random_range(-0.3..0.3);
                pts.extend(circle_points([x, y], r, nj, &mut rng));
            }
            let shift = x / 2.0;
            pts.iter_mut().for_each(|q| q[0] -= shift);
            (pts, p.k)
        }
        ShapeKind::Annulus => (disk_points(s * p.aspect, s, n, &mut rng), 1),
        ShapeKind::FigureEight => {
            let mut pts = circle_points([-s / 2.0, 0.0], s / 2.0, n / 2, &mut rng);
            pts.extend(circle_points([s / 2.0, 0.0], s / 2.0, n - n / 2, &mut rng));
            (pts, 2)
        }
        ShapeKind::FilledDisk => (disk_points(0.0, s, n, &mut rng), 0),
        ShapeKind::Torus3d => (torus_points(s, s * p.aspect, n, &mut rng), 2),
        ShapeKind::Sphere3d => (sphere_points(s, n, &mut rng), 0),
        ShapeKind::Circle3d => {
            let rot = random_rotation(&mut rng);
            let pts = circle_points([0.0, 0.0], s, n, &mut rng);
            (pts.into_iter().map(|q| rotate(&rot, q)).collect(), 1)
        }
    };
    let planar = kind.is_planar();
    add_noise(&mut cloud, p.noise_sigma, planar, &mut rng);
    if let Some(spec) = p.confounder {
        let start = cloud.len();
        add_confounder(&mut cloud, spec, p, planar, &mut rng);
        add_noise(&mut cloud[start..], p.noise_sigma, planar, &mut rng);
    }
    Ok(GeneratedShape { cloud, beta1 })
}

/// Finite one-dimensional diagram of a cloud: alpha filtration when every
/// point has `z = 0`, otherwise Rips truncated at the cone radius.
/// Full diagram of a cloud: alpha filtration when every z is zero, Rips
/// truncated at the cone radius otherwise.
pub fn cloud_persistence(cloud: &[[f64; 3]]) -> Result<PersistenceDiagram> {
    let fc = if cloud.iter().all(|p| p[2] == 0.0) {
        let flat: Vec<[f64; 2]> = cloud.iter().map(|p| [p[0], p[1]]).collect();
        alpha_filtration_2d(&flat)?
    } else {
        rips_filtration(cloud, RipsCap::Radius(cone_radius(cloud)))?
    };
    Ok(persistence_diagram(&fc)?)
}

/// Finite one-dimensional points of [`cloud_persistence`].
pub fn cloud_diagram(cloud: &[[f64; 3]]) -> Result<Vec<[f64; 2]>> {
    Ok(cloud_persistence(cloud)?.in_dim(1).iter().map(|p| [p.birth, p.death]).collect())
}

/// Significance labels aligned with `diagram`, or the reason the sample is
/// ambiguous.
pub fn label_sample(cloud: &[[f64; 3]], diagram: &[[f64; 2]], beta1: usize) -> std::result::Result<Vec<bool>, Reject> {
    let tau = birth_threshold(cloud);
    let candidates: Vec<usize> = persistence_order(diagram).into_iter().filter(|&i| diagram[i][0] <= tau).collect();
    if candidates.len() < beta1 {
        return Err(Reject::TooFewCandidates { candidates: candidates.len(), beta1 });
    }
    let pers = |i: usize| diagram[i][1] - diagram[i][0];
    let (chosen, rest) = candidates.split_at(beta1);
    let weakest = chosen.iter().map(|&i| pers(i)).fold(f64::INFINITY, f64::min);
    let strongest_other = rest.iter().map(|&i| pers(i)).fold(0.0, f64::max);
    // NaN persistence also rejects.
    if weakest.partial_cmp(&(MARGIN * strongest_other)) != Some(std::cmp::Ordering::Greater) {
        return Err(Reject::NoMargin);
    }
    let mut labels = vec![false; diagram.len()];
    for &i in chosen {
        labels[i] = true;
    }
    Ok(labels)
}

/// Shape and confounder parameters drawn for one corpus sample.
pub fn sample_params(kind: ShapeKind, noise_sigma: f64, confounder: bool, rng: &mut ChaCha8Rng) -> ShapeParams {
    let mut p = ShapeParams::new(rng.random_range(0.7..1.5), 0);
    p.noise_sigma = noise_sigma;
    p.n_points = match kind {
        ShapeKind::Circle | ShapeKind::Ellipse => rng.random_range(150..=300),
        ShapeKind::KCircles => rng.random_range(300..=500),
        ShapeKind::Annulus => rng.random_range(350..=500),
        ShapeKind::FigureEight => rng.random_range(200..=320),
        ShapeKind::FilledDisk => rng.random_range(300..=450),
        ShapeKind::Torus3d => rng.random_range(110..=130),
        ShapeKind::Sphere3d => rng.random_range(80..=110),
        ShapeKind::Circle3d => rng.random_range(50..=80),
    };
    p.k = rng.random_range(2..=5);
    p.aspect = match kind {
        ShapeKind::Ellipse => rng.random_range(0.4..0.8),
        ShapeKind::Annulus => rng.random_range(0.55..0.7),
        ShapeKind::Torus3d => rng.random_range(0.42..0.5),
        _ => 0.5,
    };
    if confounder {
        let radius_factor = if kind.is_planar() { rng.random_range(1.2..1.8) } else { rng.random_range(2.5..3.5) };
        p.confounder = Some(ConfounderSpec { radius_factor, spacing_factor: rng.random_range(2.6..5.0) });
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(CoreError::InvalidInput(format!("unknown split {s:?}"))),
        }
    }
}

fn default_confounder_rate() -> f64 {
    0.3
}

fn default_noise_levels() -> Vec<f64> {
    vec![0.0, 0.01, 0.02]
}

/// Corpus recipe. Shape counts sit at the top level next to the options,
/// e.g. `{"circle": 2, "seed": 7}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_confounder_rate")]
    pub confounder_rate: f64,
    #[serde(default = "default_noise_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSizes>,
    #[serde(flatten)]
    pub counts: BTreeMap<ShapeKind, usize>,
}

impl CorpusSpec {
    /// 260 samples over all nine kinds, 30% confounders, split 200/30/30.
    pub fn desk() -> Self {
        use ShapeKind::*;
        let counts = [
            (Circle, 25),
            (Ellipse, 25),
            (KCircles, 45),
            (Annulus, 25),
            (FigureEight, 40),
            (FilledDisk, 10),
            (Torus3d, 40),
            (Sphere3d, 10),
            (Circle3d, 40),
        ]
        .into_iter()
        .collect();
        Self {
            seed: Some(42),
            confounder_rate: 0.3,
            noise_levels: default_noise_levels(),
            split: Some(SplitSizes { train: 200, val: 30, test: 30 }),
            counts,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    fn split_sizes(&self) -> Result<SplitSizes> {
        let total = self.total();
        let s = self.split.unwrap_or_else(|| {
            let val = (total as f64 * 30.0 / 260.0).round() as usize;
            SplitSizes { train: total - 2 * val, val, test: val }
        });
        if s.train + s.val + s.test != total {
            return Err(CoreError::InvalidInput(format!(
                "split {}/{}/{} does not add up to {total} samples",
                s.train, s.val, s.test
            )));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub kind: ShapeKind,
    pub beta1: usize,
    pub seed: u64,
    pub confounder: bool,
    pub noise_sigma: f64,
    pub n_points: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: CorpusSpec,
    pub total: usize,
    pub confounders: usize,
    pub rejections: usize,
    pub split_sizes: SplitSizes,
    pub samples: Vec<ManifestEntry>,
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Plan {
    id: String,
    kind: ShapeKind,
    confounder: bool,
    seed: u64,
}

fn generate_one(plan: &Plan, noise_levels: &[f64]) -> Result<(LabeledSample, usize)> {
    for attempt in 0..MAX_ATTEMPTS {
        let seed = plan.seed.wrapping_add((attempt as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = *noise_levels.choose(&mut rng).unwrap_or(&0.0);
        let params = sample_params(plan.kind, sigma, plan.confounder, &mut rng);
        let shape = generate_shape(plan.kind, &params, rng.random())?;
        let diagram = cloud_diagram(&shape.cloud)?;
        let Ok(labels) = label_sample(&shape.cloud, &diagram, shape.beta1) else {
            continue;
        };
        let sample = LabeledSample {
            id: plan.id.clone(),
            meta: SampleMeta {
                beta1: shape.beta1,
                shape_kind: plan.kind,
                noise_sigma: sigma,
                n_points: shape.cloud.len(),
                seed,
                confounder: plan.confounder,
            },
            cloud: shape.cloud,
            diagram,
            labels,
        };
        return Ok((sample, attempt));
    }
    Err(CoreError::GenerationFailed { entry: format!("{} ({})", plan.id, plan.kind.name()), attempts: MAX_ATTEMPTS })
}

/// Generates every sample of `spec` and assigns splits. Output depends only
/// on `spec` and `seed`.
pub fn build_corpus(spec: &CorpusSpec, seed: u64) -> Result<(Vec<LabeledSample>, Manifest)> {
    let total = spec.total();
    if total == 0 {
        return Err(CoreError::InvalidInput("corpus spec has no samples".into()));
    }
    if !(0.0..=1.0).contains(&spec.confounder_rate) {
        return Err(CoreError::InvalidInput(format!("confounder rate {} outside [0, 1]", spec.confounder_rate)));
    }
    let sizes = spec.split_sizes()?;
    let mut plans: Vec<Plan> = spec
        .counts
        .iter()
        .flat_map(|(&kind, &count)| (0..count).map(move |j| (kind, j)))
        .map(|(kind, j)| {
            let id = format!("{}-{j:04}", kind.name());
            Plan { seed: seed ^ fnv1a(id.as_bytes()), id, kind, confounder: false }
        })
        .collect();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xc0f0));
    let n_conf = (spec.confounder_rate * total as f64).round() as usize;
    for &i in &order[..n_conf] {
        plans[i].confounder = true;
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b11));
    let mut split = vec![Split::Train; total];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < sizes.train {
            Split::Train
        } else if rank < sizes.train + sizes.val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let made: Vec<(LabeledSample, usize)> =
        plans.par_iter().map(|p| generate_one(p, &spec.noise_levels)).collect::<Result<_>>()?;
    let samples: Vec<ManifestEntry> = made
        .iter()
        .zip(&split)
        .map(|((s, attempts), &split)| ManifestEntry {
            id: s.id.clone(),
            split,
            kind: s.meta.shape_kind,
            beta1: s.meta.beta1,
            seed: s.meta.seed,
            confounder: s.meta.confounder,
            noise_sigma: s.meta.noise_sigma,
            n_points: s.meta.n_points,
            attempts: attempts + 1,
        })
        .collect();
    let manifest = Manifest {
        seed,
        spec: spec.clone(),
        total,
        confounders: n_conf,
        rejections: made.iter().map(|(_, a)| a).sum(),
        split_sizes: sizes,
        samples,
    };
    Ok((made.into_iter().map(|(s, _)| s).collect(), manifest))
}

/// Writes `corpus.jsonl` and `manifest.json` into `out`.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64, out: &Path) -> Result<Manifest> {
    let (samples, manifest) = build_corpus(spec, seed)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(CORPUS_FILE);
    let mut w = std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    for s in &samples {
        serde_json::to_writer(&mut w, s).map_err(json_err(&path))?;
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let mpath = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err(&mpath))?;
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// A generated corpus read back from disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub samples: Vec<LabeledSample>,
}

impl Corpus {
    pub fn from_parts(samples: Vec<LabeledSample>, manifest: Manifest) -> Self {
        Self { manifest, samples }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(json_err(&mpath))?;
        let path = dir.join(CORPUS_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let samples = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(json_err(&path)))
            .collect::<Result<Vec<LabeledSample>>>()?;
        if samples.len() != manifest.samples.len() {
            return Err(CoreError::InvalidInput(format!(
                "{} lists {} samples but {} holds {}",
                mpath.display(),
                manifest.samples.len(),
                path.display(),
                samples.len()
            )));
        }
        Ok(Self { manifest, samples })
    }

    pub fn split(&self, which: Split) -> Vec<&LabeledSample> {
        let by_id: BTreeMap<&str, Split> = self.manifest.samples.iter().map(|e| (e.id.as_str(), e.split)).collect();
        self.samples.iter().filter(|s| by_id.get(s.id.as_str()) == Some(&which)).collect()
    }
}
