//! Phase I of the monitoring algorithm: locate candidate regime-change
//! windows on the median local-variance trajectory, cluster pixels at each
//! candidate with k-medoids over PCA scores, and select the baseline
//! window by the inter-cluster-variance rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Window;
use crate::spectral::{
    pca_fit, window_cross_section, LocalVarianceTrajectory, PcaModel, PeriodogramMatrix,
    SeriesKey,
};
use crate::stats;

/// How the trajectory curvature flips at a candidate window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflectionKind {
    InflectionUp,
    InflectionDown,
}

/// A window where the second difference of the median local-variance
/// trajectory changes sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateWindow {
    pub window: Window,
    pub trigger: InflectionKind,
    pub trajectory_value: f64,
}

/// A k-medoids partition with its dissimilarity bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Item indices serving as medoids, one per cluster.
    pub medoids: Vec<usize>,
    /// Cluster assignment per item.
    pub labels: Vec<usize>,
    /// Sum of squared distances to the medoid, per cluster.
    pub within_cluster_variations: Vec<f64>,
    /// Fraction of the total dissimilarity (to the single global medoid)
    /// explained between clusters, in [0, 1].
    pub inter_cluster_fraction: f64,
    /// Total within-cluster dissimilarity, the k-medoids objective.
    pub total_within: f64,
}

/// The selected regime-change window with everything Phase II needs: the
/// PCA fitted at that window, the baseline clustering, medoid scores, and
/// the dispersion scale of the classifier kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub window: Window,
    pub pca: PcaModel,
    pub clustering: Clustering,
    pub medoid_scores: Vec<Vec<f64>>,
    pub dispersion_scale: f64,
    pub keys: Vec<SeriesKey>,
}

/// Clustering outcome for one k at one candidate window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEvaluation {
    pub k: usize,
    pub clustering: Clustering,
}

/// Full diagnostics for one candidate window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub candidate: CandidateWindow,
    pub pca: PcaModel,
    pub scores: Vec<Vec<f64>>,
    pub keys: Vec<SeriesKey>,
    pub evaluations: Vec<KEvaluation>,
    /// Smallest k whose inter-cluster fraction reaches the threshold.
    pub qualifying_k: Option<usize>,
}

/// Baseline selection plus the per-candidate diagnostics behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSelection {
    pub baseline: BaselineState,
    pub evaluations: Vec<CandidateEvaluation>,
}

fn median3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = values.to_vec();
    for i in 1..n.saturating_sub(1) {
        out[i] = stats::median(&values[i - 1..=i + 1]);
    }
    out
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Windows where the discrete second difference of the trajectory changes
/// sign. `smooth` applies a 3-point median filter first, which damps
/// single-window noise spikes.
pub fn inflection_candidates(
    traj: &LocalVarianceTrajectory,
    smooth: bool,
) -> Result<Vec<CandidateWindow>> {
    let n = traj.values.len();
    if n < 3 {
        return Err(Error::TooShort { needed: 3, have: n });
    }
    let values = if smooth { median3(&traj.values) } else { traj.values.clone() };
    // Second differences exist for interior indices 1..n-1.
    let d2: Vec<f64> =
        (1..n - 1).map(|i| values[i + 1] - 2.0 * values[i] + values[i - 1]).collect();
    let mut out = Vec::new();
    for j in 1..d2.len() {
        let s = sign(d2[j]);
        if s != 0 && s != sign(d2[j - 1]) {
            let idx = j + 1; // trajectory index of this second difference
            out.push(CandidateWindow {
                window: traj.windows[idx],
                trigger: if s > 0 {
                    InflectionKind::InflectionUp
                } else {
                    InflectionKind::InflectionDown
                },
                trajectory_value: traj.values[idx],
            });
        }
    }
    Ok(out)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub(crate) fn dissimilarity_matrix(features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = features.len();
    let d = features[0].len();
    for row in features {
        if row.len() != d {
            return Err(Error::LengthMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite feature entry"));
        }
    }
    let mut dis = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(&features[i], &features[j]);
            dis[i][j] = v;
            dis[j][i] = v;
        }
    }
    Ok(dis)
}

pub(crate) fn assignment_cost(dis: &[Vec<f64>], medoids: &[usize]) -> f64 {
    let mut cost = 0.0;
    for i in 0..dis.len() {
        cost += medoids.iter().map(|&m| dis[i][m]).fold(f64::INFINITY, f64::min);
    }
    cost
}

fn build_clustering(features: &[Vec<f64>], dis: &[Vec<f64>], mut medoids: Vec<usize>) -> Clustering {
    let n = features.len();
    medoids.sort_unstable();
    let k = medoids.len();
    let mut labels = vec![0usize; n];
    for i in 0..n {
        let mut best = 0;
        for (c, &m) in medoids.iter().enumerate() {
            if dis[i][m] < dis[i][medoids[best]] {
                best = c;
            }
        }
        labels[i] = best;
    }
    // A medoid always belongs to its own cluster, even when another
    // medoid sits at distance zero.
    for (c, &m) in medoids.iter().enumerate() {
        labels[m] = c;
    }
    let mut within = vec![0.0; k];
    for i in 0..n {
        within[labels[i]] += dis[i][medoids[labels[i]]];
    }
    let total_within: f64 = within.iter().sum();

    // Total dissimilarity to the single best global medoid.
    let global_total = (0..n)
        .map(|g| (0..n).map(|i| dis[i][g]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let inter = if global_total > 0.0 {
        (1.0 - total_within / global_total).clamp(0.0, 1.0)
    } else {
        0.0
    };

    Clustering {
        k,
        medoids,
        labels,
        within_cluster_variations: within,
        inter_cluster_fraction: inter,
        total_within,
    }
}

/// Build a clustering directly from given medoid indices (no swap search).
pub fn clustering_from_medoids(features: &[Vec<f64>], medoids: &[usize]) -> Result<Clustering> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no feature rows"));
    }
    if medoids.is_empty() || medoids.len() > features.len() {
        return Err(Error::KTooLarge { k: medoids.len(), items: features.len() });
    }
    let dis = dissimilarity_matrix(features)?;
    Ok(build_clustering(features, &dis, medoids.to_vec()))
}

/// PAM-style k-medoids under squared Euclidean dissimilarity.
///
/// The seed picks the first medoid; the remainder are added farthest-first
/// and the partition is then refined by best-improvement swaps until no
/// single (medoid, non-medoid) exchange lowers the objective. Deterministic
/// for a given seed.
pub fn kmedoids(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    let n = features.len();
    if n == 0 {
        return Err(Error::EmptyInput("no feature rows"));
    }
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, items: n });
    }
    let dis = dissimilarity_matrix(features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let mut best_idx = None;
        let mut best_gap = -1.0;
        for i in 0..n {
            if medoids.contains(&i) {
                continue;
            }
            let gap = medoids.iter().map(|&m| dis[i][m]).fold(f64::INFINITY, f64::min);
            if gap > best_gap {
                best_gap = gap;
                best_idx = Some(i);
            }
        }
        medoids.push(best_idx.expect("fewer candidates than k"));
    }

    let mut cost = assignment_cost(&dis, &medoids);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for mi in 0..medoids.len() {
            for h in 0..n {
                if medoids.contains(&h) {
                    continue;
                }
                let saved = medoids[mi];
                let mut trial = medoids.clone();
                trial[mi] = h;
                let c = assignment_cost(&dis, &trial);
                if c < cost - 1e-12 && best.map_or(true, |(_, _, bc)| c < bc) {
                    best = Some((mi, h, c));
                }
                let _ = saved;
            }
        }
        match best {
            Some((mi, h, c)) => {
                medoids[mi] = h;
                cost = c;
            }
            None => break,
        }
    }

    Ok(build_clustering(features, &dis, medoids))
}

/// Fraction of total dissimilarity explained between the clusters of an
/// existing partition, recomputed from its labels and medoids.
pub fn cluster_variance_ratio(clustering: &Clustering, features: &[Vec<f64>]) -> f64 {
    let dis = match dissimilarity_matrix(features) {
        Ok(d) => d,
        Err(_) => return 0.0,
    };
    build_clustering(features, &dis, clustering.medoids.clone()).inter_cluster_fraction
}

fn dispersion_scale(scores: &[Vec<f64>], clustering: &Clustering) -> f64 {
    let dists: Vec<f64> = scores
        .iter()
        .zip(&clustering.labels)
        .map(|(s, &c)| squared_distance(s, &scores[clustering.medoids[c]]).sqrt())
        .collect();
    let scale = stats::median(&dists);
    if scale > 0.0 {
        return scale;
    }
    // Degenerate: fall back to the smallest nonzero pairwise distance.
    let mut smallest = f64::INFINITY;
    for i in 0..scores.len() {
        for j in (i + 1)..scores.len() {
            let d = squared_distance(&scores[i], &scores[j]).sqrt();
            if d > 0.0 && d < smallest {
                smallest = d;
            }
        }
    }
    if smallest.is_finite() {
        smallest
    } else {
        1.0
    }
}

/// Fit a baseline directly at one window cross-section with a fixed k.
pub fn fit_baseline(
    x: &crate::spectral::WindowCrossSection,
    k: usize,
    pca_var_target: f64,
    seed: u64,
) -> Result<BaselineState> {
    let pca = pca_fit(x, pca_var_target)?;
    let scores: Vec<Vec<f64>> =
        x.rows.iter().map(|r| pca.project(r)).collect::<Result<_>>()?;
    let clustering = kmedoids(&scores, k, seed)?;
    let medoid_scores = clustering.medoids.iter().map(|&m| scores[m].clone()).collect();
    let dispersion = dispersion_scale(&scores, &clustering);
    Ok(BaselineState {
        window: x.window,
        pca,
        clustering,
        medoid_scores,
        dispersion_scale: dispersion,
        keys: x.keys.clone(),
    })
}

/// Cluster every candidate window for every k in `k_range` and record the
/// inter-cluster fractions.
pub fn evaluate_candidates(
    candidates: &[CandidateWindow],
    matrices: &[PeriodogramMatrix],
    k_range: std::ops::RangeInclusive<usize>,
    pca_var_target: f64,
    threshold: f64,
    seed: u64,
) -> Result<Vec<CandidateEvaluation>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidate windows"));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let x = window_cross_section(matrices, cand.window.index)?;
        let pca = pca_fit(&x, pca_var_target)?;
        let scores: Vec<Vec<f64>> =
            x.rows.iter().map(|r| pca.project(r)).collect::<Result<_>>()?;
        let mut evaluations = Vec::new();
        let mut qualifying_k = None;
        for k in k_range.clone() {
            // Distinct deterministic stream per (window, k).
            let sub_seed = seed
                .wrapping_add((cand.window.index as u64) << 20)
                .wrapping_add(k as u64);
            let clustering = kmedoids(&scores, k, sub_seed)?;
            if qualifying_k.is_none() && clustering.inter_cluster_fraction >= threshold {
                qualifying_k = Some(k);
            }
            evaluations.push(KEvaluation { k, clustering });
        }
        out.push(CandidateEvaluation {
            candidate: cand.clone(),
            pca,
            scores,
            keys: x.keys.clone(),
            evaluations,
            qualifying_k,
        });
    }
    Ok(out)
}

/// Pick the baseline among evaluated candidates: smallest qualifying k
/// first, then the latest window (closest to established
/// non-stationarity).
pub fn select_baseline(
    evaluations: &[CandidateEvaluation],
    threshold: f64,
) -> Result<BaselineState> {
    let mut winner: Option<(&CandidateEvaluation, usize)> = None;
    for ev in evaluations {
        let Some(k) = ev.qualifying_k else { continue };
        let better = match winner {
            None => true,
            Some((cur, cur_k)) => {
                k < cur_k
                    || (k == cur_k && ev.candidate.window.index > cur.candidate.window.index)
            }
        };
        if better {
            winner = Some((ev, k));
        }
    }
    let (ev, k) = winner.ok_or(Error::NoCandidateQualifies { threshold })?;
    let clustering = ev
        .evaluations
        .iter()
        .find(|e| e.k == k)
        .expect("qualifying k missing from evaluations")
        .clustering
        .clone();
    let medoid_scores: Vec<Vec<f64>> =
        clustering.medoids.iter().map(|&m| ev.scores[m].clone()).collect();
    let dispersion = dispersion_scale(&ev.scores, &clustering);
    Ok(BaselineState {
        window: ev.candidate.window,
        pca: ev.pca.clone(),
        clustering,
        medoid_scores,
        dispersion_scale: dispersion,
        keys: ev.keys.clone(),
    })
}

/// Evaluate candidates and select the baseline in one step.
pub fn select_regime_window(
    candidates: &[CandidateWindow],
    matrices: &[PeriodogramMatrix],
    k_range: std::ops::RangeInclusive<usize>,
    pca_var_target: f64,
    threshold: f64,
    seed: u64,
) -> Result<RegimeSelection> {
    let evaluations =
        evaluate_candidates(candidates, matrices, k_range, pca_var_target, threshold, seed)?;
    let baseline = select_baseline(&evaluations, threshold)?;
    Ok(RegimeSelection { baseline, evaluations })
}
