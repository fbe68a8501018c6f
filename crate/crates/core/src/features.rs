//! Per-point diagram descriptors, global auxiliary statistics and the padded
//! bundle consumed by the network.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::synth::LabeledSample;

/// Floor on the birth inside the death/birth log-ratio.
pub const RATIO_EPS: f64 = 1e-12;
pub const RATIO_CLAMP: f64 = 20.0;
pub const KNN_K: usize = 10;
pub const AUX_LEN: usize = 14;

pub const AUX_NAMES: [&str; AUX_LEN] = [
    "n_pd",
    "mean_pers",
    "std_pers",
    "max_pers",
    "mean_birth",
    "n_pc",
    "mean_axis_std",
    "mean_norm",
    "extent_x",
    "extent_y",
    "extent_z",
    "knn_std",
    "pca_ratio",
    "density_cv",
];

/// Which of the four auxiliary groups enter the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxGroups {
    pub pd_stats: bool,
    pub pc_stats: bool,
    pub bbox: bool,
    pub noise: bool,
}

impl AuxGroups {
    pub const ALL: Self = Self { pd_stats: true, pc_stats: true, bbox: true, noise: true };
    pub const NONE: Self = Self { pd_stats: false, pc_stats: false, bbox: false, noise: false };

    pub fn len(&self) -> usize {
        5 * self.pd_stats as usize + 3 * self.pc_stats as usize + 3 * self.bbox as usize + 3 * self.noise as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for AuxGroups {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureToggles {
    pub use_cloud: bool,
    pub aux: AuxGroups,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self { use_cloud: true, aux: AuxGroups::ALL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub pd_feats: Vec<[f64; 4]>,
    pub mask: Vec<bool>,
    pub aux: Vec<f64>,
    pub cloud: Vec<[f64; 3]>,
    pub labels: Option<Vec<bool>>,
    /// Diagram index behind each retained row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source: Vec<usize>,
}

impl FeatureBundle {
    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn persistence(p: &[f64; 2]) -> f64 {
    p[1] - p[0]
}

pub fn log_ratio(birth: f64, death: f64) -> f64 {
    (death / birth.max(RATIO_EPS)).ln().clamp(-RATIO_CLAMP, RATIO_CLAMP)
}

/// Diagram indices ordered by descending persistence, ties by smaller birth
/// and then by index.
pub fn persistence_order(diagram: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..diagram.len()).collect();
    idx.sort_by(|&i, &j| {
        persistence(&diagram[j])
            .total_cmp(&persistence(&diagram[i]))
            .then(diagram[i][0].total_cmp(&diagram[j][0]))
            .then(i.cmp(&j))
    });
    idx
}

/// Rows `(b, d, d − b, δ)` for the `n_pd` most persistent points followed
/// by zero padding, the validity mask and the diagram index of each row.
pub fn pd_point_features(diagram: &[[f64; 2]], n_pd: usize) -> (Vec<[f64; 4]>, Vec<bool>, Vec<usize>) {
    let order = persistence_order(diagram);
    let kept = &order[..order.len().min(n_pd)];
    let mut feats = vec![[0.0; 4]; n_pd];
    let mut mask = vec![false; n_pd];
    for (row, &i) in kept.iter().enumerate() {
        let [b, d] = diagram[i];
        feats[row] = [b, d, d - b, log_ratio(b, d)];
        mask[row] = true;
    }
    (feats, mask, kept.to_vec())
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// `(n, mean persistence, std persistence, max persistence, mean birth)`.
pub fn pd_statistics(diagram: &[[f64; 2]]) -> [f64; 5] {
    if diagram.is_empty() {
        return [0.0; 5];
    }
    let (mean_p, std_p) = mean_std(diagram.iter().map(persistence));
    let max_p = diagram.iter().map(persistence).fold(f64::NEG_INFINITY, f64::max);
    let (mean_b, _) = mean_std(diagram.iter().map(|p| p[0]));
    [diagram.len() as f64, mean_p, std_p, max_p, mean_b]
}

/// `(n, mean per-axis std, mean norm, extent x, extent y, extent z)`.
pub fn cloud_statistics(cloud: &[[f64; 3]]) -> Result<[f64; 6]> {
    if cloud.is_empty() {
        return Err(CoreError::InvalidInput("empty point cloud".into()));
    }
    let mut axis_std = 0.0;
    let mut extents = [0.0; 3];
    for a in 0..3 {
        let (_, s) = mean_std(cloud.iter().map(|p| p[a]));
        axis_std += s / 3.0;
        let lo = cloud.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = cloud.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        extents[a] = hi - lo;
    }
    let (mean_norm, _) = mean_std(cloud.iter().map(norm));
    Ok([cloud.len() as f64, axis_std, mean_norm, extents[0], extents[1], extents[2]])
}

fn norm(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Distinct points in first-occurrence order.
pub fn dedup_cloud(cloud: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    let key = |p: &[f64; 3]| p.map(f64::to_bits);
    idx.sort_by_key(|&i| (key(&cloud[i]), i));
    let mut keep = vec![false; cloud.len()];
    for (k, &i) in idx.iter().enumerate() {
        keep[i] = k == 0 || cloud[idx[k - 1]] != cloud[i];
    }
    (0..cloud.len()).filter(|&i| keep[i]).map(|i| cloud[i]).collect()
}

/// Mean distance from every point to its `k` nearest other points.
pub fn mean_knn_distances(cloud: &[[f64; 3]], k: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(cloud.len());
    cloud
        .iter()
        .enumerate()
        .map(|(i, p)| {
            row.clear();
            row.extend(cloud.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| dist(p, q)));
            let k = k.min(row.len());
            if k == 0 {
                return 0.0;
            }
            row.select_nth_unstable_by(k - 1, f64::total_cmp);
            row[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Smallest over largest eigenvalue of the coordinate covariance.
pub fn pca_ratio(cloud: &[[f64; 3]]) -> f64 {
    let n = cloud.len() as f64;
    let mut mean = [0.0; 3];
    for p in cloud {
        for a in 0..3 {
            mean[a] += p[a] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in cloud {
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
            }
        }
    }
    let eig: nalgebra::Vector3<f64> = SymmetricEigen::new(cov).eigenvalues;
    let max = eig.max();
    if max <= 0.0 {
        return 0.0;
    }
    (eig.min() / max).max(0.0)
}

/// `(knn_std, pca_ratio, density_cv)` with `k_eff = min(k, n − 1)` over the
/// distinct points of the cloud.
pub fn noise_uniformity(cloud: &[[f64; 3]], k: usize) -> Result<[f64; 3]> {
    let pts = dedup_cloud(cloud);
    if pts.len() < 2 {
        return Err(CoreError::InvalidInput(format!(
            "noise statistics need at least 2 distinct points, got {}",
            pts.len()
        )));
    }
    let knn = mean_knn_distances(&pts, k.min(pts.len() - 1));
    let (_, knn_std) = mean_std(knn.iter().copied());
    let (dmean, dstd) = mean_std(knn.iter().map(|d| 1.0 / d));
    Ok([knn_std, pca_ratio(&pts), dstd / dmean])
}

/// All 14 auxiliary values in canonical order.
pub fn aux_vector(diagram: &[[f64; 2]], cloud: &[[f64; 3]]) -> Result<[f64; AUX_LEN]> {
    let pd = pd_statistics(diagram);
    let pc = cloud_statistics(cloud)?;
    let noise = noise_uniformity(cloud, KNN_K)?;
    let mut out = [0.0; AUX_LEN];
    out[..5].copy_from_slice(&pd);
    out[5..11].copy_from_slice(&pc);
    out[11..].copy_from_slice(&noise);
    Ok(out)
}

/// Keeps the enabled groups of a full auxiliary vector.
pub fn select_aux(full: &[f64; AUX_LEN], groups: AuxGroups) -> Vec<f64> {
    let mut out = Vec::with_capacity(groups.len());
    if groups.pd_stats {
        out.extend_from_slice(&full[0..5]);
    }
    if groups.pc_stats {
        out.extend_from_slice(&full[5..8]);
    }
    if groups.bbox {
        out.extend_from_slice(&full[8..11]);
    }
    if groups.noise {
        out.extend_from_slice(&full[11..14]);
    }
    out
}

/// Exactly `n` points: a random subset without replacement when the cloud
/// is larger, otherwise whole shuffled passes over the cloud.
pub fn resample_cloud(cloud: &[[f64; 3]], n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    if cloud.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        idx.shuffle(rng);
        let take = (n - out.len()).min(idx.len());
        out.extend(idx[..take].iter().map(|&i| cloud[i]));
    }
    out
}

pub fn build_bundle(
    sample: &LabeledSample,
    n_pd: usize,
    n_pc: usize,
    toggles: FeatureToggles,
) -> Result<FeatureBundle> {
    if n_pd == 0 {
        return Err(CoreError::InvalidInput("N_pd must be at least 1".into()));
    }
    let (pd_feats, mask, source) = pd_point_features(&sample.diagram, n_pd);
    // Unlabeled inputs carry no labels; an empty diagram counts as labeled.
    if !sample.labels.is_empty() && sample.labels.len() != sample.diagram.len() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} diagram points",
            sample.labels.len(),
            sample.diagram.len()
        )));
    }
    let labeled = !sample.labels.is_empty() || sample.diagram.is_empty();
    let labels = labeled.then(|| {
        let mut l = vec![false; n_pd];
        for (row, &i) in source.iter().enumerate() {
            l[row] = sample.labels[i];
        }
        l
    });
    let aux = if toggles.aux.is_empty() {
        Vec::new()
    } else {
        select_aux(&aux_vector(&sample.diagram, &sample.cloud)?, toggles.aux)
    };
    let cloud = if toggles.use_cloud {
        let mut rng = ChaCha8Rng::seed_from_u64(sample.meta.seed ^ 0x63_6c6f_7564);
        resample_cloud(&sample.cloud, n_pc, &mut rng)
    } else {
        Vec::new()
    };
    let bundle = FeatureBundle { pd_feats, mask, aux, cloud, labels, source };
    let finite =
        bundle.pd_feats.iter().flatten().chain(&bundle.aux).chain(bundle.cloud.iter().flatten()).all(|x| x.is_finite());
    if !finite {
        return Err(CoreError::InvalidInput(format!("sample {} has non-finite features", sample.id)));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<[f64; 3]> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
    }

    #[test]
    fn single_point_row() {
        let (f, m, src) = pd_point_features(&[[0.5, 1.0]], 4);
        assert_eq!(&f[0][..3], &[0.5, 1.0, 0.5]);
        assert!((f[0][3] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(&f[1..], &[[0.0; 4]; 3]);
        assert_eq!(m, [true, false, false, false]);
        assert_eq!(src, [0]);
    }

    #[test]
    fn empty_diagram_is_all_padding() {
        let (f, m, _) = pd_point_features(&[], 3);
        assert_eq!(f, vec![[0.0; 4]; 3]);
        assert_eq!(m, vec![false; 3]);
    }

    #[test]
    fn zero_birth_ratio_is_clamped() {
        let (f, _, _) = pd_point_features(&[[0.0, 0.3]], 1);
        assert_eq!(f[0][3], 20.0);
    }

    #[test]
    fn truncation_keeps_most_persistent_with_tie_breaks() {
        let d = [[0.5, 0.75], [0.0, 1.0], [0.375, 0.5], [0.25, 0.5], [0.25, 0.875]];
        let (f, _, src) = pd_point_features(&d, 3);
        // 1.0, 0.625, then the 0.25 tie goes to the earlier birth
        assert_eq!(src, [1, 4, 3]);
        assert_eq!(f[2][0], 0.25);
    }

    #[test]
    fn diagram_statistics() {
        assert_eq!(pd_statistics(&[[0.5, 1.0]]), [1.0, 0.5, 0.0, 0.5, 0.5]);
        assert_eq!(pd_statistics(&[]), [0.0; 5]);
        assert_eq!(pd_statistics(&[[0.0, 1.0], [0.0, 3.0]]), [2.0, 2.0, 1.0, 3.0, 0.0]);
    }

    #[test]
    fn square_cloud_statistics() {
        let s = cloud_statistics(&square()).unwrap();
        assert_eq!(s[0], 4.0);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[2] - (2.0 + 2f64.sqrt()) / 4.0).abs() < 1e-15);
        assert_eq!(&s[3..], &[1.0, 1.0, 0.0]);
        assert_eq!(cloud_statistics(&[[0.0; 3]]).unwrap(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(cloud_statistics(&[]).is_err());
    }

    #[test]
    fn square_noise_statistics() {
        let [knn_std, pca, cv] = noise_uniformity(&square(), KNN_K).unwrap();
        assert!(knn_std.abs() < 1e-15);
        assert!(cv.abs() < 1e-15);
        assert_eq!(pca, 0.0);
    }

    #[test]
    fn pair_and_duplicates() {
        let pair = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(noise_uniformity(&pair, KNN_K).unwrap(), [0.0, 0.0, 0.0]);
        let dup = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(noise_uniformity(&dup, KNN_K).unwrap(), [0.0, 0.0, 0.0]);
        assert!(noise_uniformity(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], KNN_K).is_err());
    }

    #[test]
    fn coplanar_tilted_cloud_has_tiny_ratio() {
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|i| {
                let (u, v) = ((i % 7) as f64, (i / 7) as f64);
                [u, v, 0.0]
            })
            .collect();
        assert_eq!(pca_ratio(&pts), 0.0);
    }

    #[test]
    fn cycle_padding_covers_every_point_twice() {
        let cloud: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let out = resample_cloud(&cloud, 25, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out.len(), 25);
        for p in &cloud {
            assert!(out.iter().filter(|q| *q == p).count() >= 2);
        }
        let sub = resample_cloud(&cloud, 4, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(dedup_cloud(&sub).len(), 4);
    }

    #[test]
    fn aux_group_lengths() {
        assert_eq!(AuxGroups::ALL.len(), AUX_LEN);
        assert_eq!(AuxGroups::NONE.len(), 0);
        let full: [f64; AUX_LEN] = std::array::from_fn(|i| i as f64);
        let no_bbox = AuxGroups { bbox: false, ..AuxGroups::ALL };
        assert_eq!(select_aux(&full, no_bbox), [0., 1., 2., 3., 4., 5., 6., 7., 11., 12., 13.]);
    }
}
