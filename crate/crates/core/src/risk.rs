//! Phase II of the monitoring algorithm: classify post-baseline windows
//! against the baseline clusters, track the pq classification-uncertainty
//! trajectory, and raise the staged risk warnings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regime::BaselineState;
use crate::series::Window;
use crate::spectral::{window_cross_section, PeriodogramMatrix, WindowCrossSection};
use crate::stats;

/// Class posterior probabilities of one classified observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector {
    pub probabilities: Vec<f64>,
    /// Index of the winning class.
    pub argmax: usize,
    /// Probability of the winning class.
    pub p: f64,
}

impl PosteriorVector {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::EmptyInput("posterior with no classes"));
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p))
            || (sum - 1.0).abs() > 1e-12
        {
            return Err(Error::DomainError(format!(
                "posterior must be a probability vector, got sum {sum}"
            )));
        }
        let argmax = probabilities
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let p = probabilities[argmax];
        Ok(Self { probabilities, argmax, p })
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    /// Classification variation p(1-p) of the winning class.
    pub fn pq(&self) -> f64 {
        pq(self.p)
    }
}

/// Classification variation M(p) = p(1-p), bounded by 0.25.
pub fn pq(p: f64) -> f64 {
    p * (1.0 - p)
}

/// Asymptotic mean and variance of the estimated classification variation
/// M(p-hat) for a class proportion estimated from n draws:
/// mean = pq, variance = pq(1 - 4pq)/n.
pub fn m_moments(p: f64, n: usize) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::DomainError(format!("p out of [0,1]: {p}")));
    }
    if n == 0 {
        return Err(Error::DomainError("n must be >= 1".into()));
    }
    let m = pq(p);
    Ok((m, m * (1.0 - 4.0 * m) / n as f64))
}

/// Classify one pixel's periodogram features against the baseline
/// clusters.
///
/// Features are projected with the baseline PCA; class posteriors follow a
/// Gaussian kernel over squared score distances to the medoids,
/// p_l proportional to exp(-d_l^2 / (2 s^2)) with s the baseline
/// dispersion scale.
pub fn classify_window(baseline: &BaselineState, features: &[f64]) -> Result<PosteriorVector> {
    let scores = baseline.pca.project(features)?;
    let s2 = 2.0 * baseline.dispersion_scale * baseline.dispersion_scale;
    let exponents: Vec<f64> = baseline
        .medoid_scores
        .iter()
        .map(|m| {
            let d2: f64 = scores.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum();
            -d2 / s2
        })
        .collect();
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    PosteriorVector::new(weights.iter().map(|w| w / total).collect())
}

/// One window's spatial summary of pq over all pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub window: Window,
    pub median_pq: f64,
    pub iqr_pq: f64,
    pub n_pixels: usize,
}

/// The Median(pq)/IQR(pq) series for all windows after the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrajectory {
    pub baseline_window: Window,
    pub points: Vec<RiskPoint>,
}

/// Classify one cross-section and summarise pq with its spatial median and
/// interquartile range.
pub fn risk_point(baseline: &BaselineState, x: &WindowCrossSection) -> Result<RiskPoint> {
    if x.rows.is_empty() {
        return Err(Error::EmptyInput("cross-section with no pixels"));
    }
    let pqs: Vec<f64> = x
        .rows
        .iter()
        .map(|row| classify_window(baseline, row).map(|p| p.pq()))
        .collect::<Result<_>>()?;
    Ok(RiskPoint {
        window: x.window,
        median_pq: stats::median(&pqs),
        iqr_pq: stats::iqr(&pqs),
        n_pixels: pqs.len(),
    })
}

/// Sequentially classify every window after the baseline. Each new sample
/// appends exactly one window, so streaming callers can instead call
/// [`risk_point`] on the newest cross-section.
pub fn risk_trajectory(
    matrices: &[PeriodogramMatrix],
    baseline: &BaselineState,
) -> Result<RiskTrajectory> {
    let first = matrices.first().ok_or(Error::EmptyInput("no periodogram matrices"))?;
    let count = first.n_windows();
    let t0 = baseline.window.index;
    if t0 >= count {
        return Err(Error::NoPostBaselineWindows { baseline: t0, count });
    }
    let points = ((t0 + 1)..=count)
        .map(|l| risk_point(baseline, &window_cross_section(matrices, l)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskTrajectory { baseline_window: baseline.window, points })
}

/// Staged warnings: earliest sustained crossings of the emergent-risk and
/// imminent-risk levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningReport {
    pub t_r: Option<Window>,
    pub t_i: Option<Window>,
    pub t_r_level: f64,
    pub t_i_level: f64,
    pub persistence: usize,
}

fn first_sustained(points: &[RiskPoint], level: f64, persistence: usize) -> Option<Window> {
    let mut run = 0usize;
    for (i, pt) in points.iter().enumerate() {
        if pt.median_pq >= level {
            run += 1;
            if run >= persistence {
                return Some(points[i + 1 - persistence].window);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Detect the emergent (t_R) and imminent (t_I) risk windows as the first
/// crossings of each level sustained for `persistence` consecutive
/// windows. Persistence 1 reduces to plain first crossing.
pub fn detect_thresholds(
    traj: &RiskTrajectory,
    t_r_level: f64,
    t_i_level: f64,
    persistence: usize,
) -> Result<WarningReport> {
    if !(0.0 < t_r_level && t_r_level <= 0.25) || !(0.0 < t_i_level && t_i_level <= 0.25) {
        return Err(Error::InvalidConfig("risk levels must lie in (0, 0.25]".into()));
    }
    if t_r_level > t_i_level {
        return Err(Error::InvalidConfig(
            "emergent-risk level must not exceed imminent-risk level".into(),
        ));
    }
    if persistence == 0 {
        return Err(Error::InvalidConfig("persistence must be >= 1".into()));
    }
    let t_r = first_sustained(&traj.points, t_r_level, persistence);
    let t_i = first_sustained(&traj.points, t_i_level, persistence);
    if let (Some(r), Some(i)) = (&t_r, &t_i) {
        debug_assert!(r.index <= i.index);
    }
    Ok(WarningReport { t_r, t_i, t_r_level, t_i_level, persistence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::fit_baseline;
    use crate::series::{Detrend, SampleGrid, WindowSpec};
    use crate::spectral::{dynamic_periodogram, SeriesKey};
    use crate::stats::kendall_tau;
    use crate::synth::{generate, oracle_pq_moments, NoiseModel, PostChange, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn synthetic_baseline(seed: u64) -> (Vec<PeriodogramMatrix>, BaselineState) {
        // Two location groups with distinct baseline power so the k = 2
        // clustering is meaningful and stable over time.
        let cfg = SynthConfig {
            seed,
            n_locations: 2,
            pixels_per_location: 20,
            count: 44,
            noise_model: NoiseModel::White,
            location_sigma_spread: 1.5,
            ..SynthConfig::default()
        };
        let spec = WindowSpec::new(16, 1, Detrend::Linear).unwrap();
        let dataset = generate(&cfg).unwrap();
        let matrices: Vec<PeriodogramMatrix> =
            dataset.iter().map(|s| dynamic_periodogram(s, &spec).unwrap()).collect();
        let x = window_cross_section(&matrices, 8).unwrap();
        let baseline = fit_baseline(&x, 2, 0.9, seed).unwrap();
        (matrices, baseline)
    }

    fn toy_baseline(scale: f64) -> BaselineState {
        // Two medoids on a line, identity PCA, controlled dispersion.
        let grid = SampleGrid::new(
            chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            12,
            20,
        )
        .unwrap();
        let spec = WindowSpec::new(4, 1, Detrend::MeanOnly).unwrap();
        let window = crate::series::grid_windows(&grid, &spec).unwrap()[0];
        let features = vec![vec![0.0, 0.0], vec![4.0, 0.0]];
        let clustering = crate::regime::clustering_from_medoids(&features, &[0, 1]).unwrap();
        BaselineState {
            window,
            pca: crate::spectral::PcaModel {
                feature_means: vec![0.0, 0.0],
                component_variances: vec![1.0, 1.0],
                loadings: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                retained: 2,
            },
            clustering,
            medoid_scores: features.clone(),
            dispersion_scale: scale,
            keys: vec![
                SeriesKey { location_id: "a".into(), pixel_id: "p0".into() },
                SeriesKey { location_id: "b".into(), pixel_id: "p1".into() },
            ],
        }
    }

    #[test]
    fn classify_at_medoid_is_confident() {
        let b = toy_baseline(0.1);
        let post = classify_window(&b, &[0.0, 0.0]).unwrap();
        assert_eq!(post.argmax, 0);
        assert!(post.p > 0.999);
        assert!(post.pq() < 1e-3);
    }

    #[test]
    fn classify_equidistant_is_uniform() {
        let b = toy_baseline(1.0);
        let post = classify_window(&b, &[2.0, 5.0]).unwrap();
        assert_abs_diff_eq!(post.probabilities[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.probabilities[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.pq(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn classify_closed_form_softmax() {
        // d1^2 = 0, d2^2 = 2 s^2 gives p = 1 / (1 + e^-1).
        let s = 2.0_f64;
        let b = toy_baseline(s);
        let x = (2.0 * s * s).sqrt();
        let post = classify_window(&b, &[0.0, 0.0]).unwrap();
        assert_eq!(post.argmax, 0);
        // Move the second medoid to the required distance instead.
        let mut b2 = toy_baseline(s);
        b2.medoid_scores = vec![vec![0.0, 0.0], vec![x, 0.0]];
        let post = classify_window(&b2, &[0.0, 0.0]).unwrap();
        let expect = 1.0 / (1.0 + (-1.0_f64).exp());
        assert_abs_diff_eq!(post.p, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(post.p, 0.7310585786300049, epsilon = 1e-12);
    }

    #[test]
    fn classify_length_mismatch() {
        let b = toy_baseline(1.0);
        assert!(matches!(
            classify_window(&b, &[1.0, 2.0, 3.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pq_examples_and_symmetry() {
        assert_eq!(pq(1.0), 0.0);
        assert_eq!(pq(0.5), 0.25);
        assert_eq!(pq(0.75), 0.1875);
        for p in [0.1, 0.3, 0.42, 0.9] {
            assert_abs_diff_eq!(pq(p), pq(1.0 - p), epsilon = 1e-15);
        }
    }

    #[test]
    fn m_moments_examples() {
        assert_eq!(m_moments(0.5, 7).unwrap(), (0.25, 0.0));
        assert_eq!(m_moments(1.0, 3).unwrap(), (0.0, 0.0));
        let (mean, var) = m_moments(0.25, 100).unwrap();
        assert_abs_diff_eq!(mean, 0.1875);
        assert_abs_diff_eq!(var, 0.00046875, epsilon = 1e-15);
        assert!(m_moments(1.5, 10).is_err());
        assert!(m_moments(0.5, 0).is_err());
    }

    #[test]
    fn m_moments_against_monte_carlo() {
        // The asymptotic mean carries an exact -pq/n finite-sample bias;
        // allow for it explicitly alongside the Monte Carlo error.
        for &(p, n) in &[(0.25_f64, 100_usize), (0.5, 100), (0.1, 20)] {
            let trials = 200_000;
            let (mean_hat, var_hat) = oracle_pq_moments(p, n, trials, 99).unwrap();
            let (mean, var) = m_moments(p, n).unwrap();
            let bias = pq(p) / n as f64;
            let se_mean = (var.max(1e-12) / trials as f64).sqrt();
            assert!(
                (mean_hat - (mean - bias)).abs() <= 4.0 * se_mean,
                "mean off: hat {mean_hat}, asymptotic {mean}, bias {bias}"
            );
            // Variance agrees to the leading order in 1/n.
            let tol = 3.0 * var * (2.0 / trials as f64).sqrt() + 3.0 * pq(p).powi(2) / (n * n) as f64;
            assert!(
                (var_hat - var).abs() <= tol.max(1e-8),
                "var off: hat {var_hat}, asymptotic {var}, tol {tol}"
            );
        }
    }

    #[test]
    fn stationary_series_keep_low_pq() {
        let mut low = 0usize;
        let mut total = 0usize;
        for seed in 0..20 {
            let (matrices, baseline) = synthetic_baseline(seed);
            let traj = risk_trajectory(&matrices, &baseline).unwrap();
            for pt in &traj.points {
                total += 1;
                if pt.median_pq < 0.125 {
                    low += 1;
                }
            }
        }
        let frac = low as f64 / total as f64;
        assert!(frac >= 0.95, "only {frac:.3} of stationary windows stayed below 0.125");
    }

    #[test]
    fn spectral_drift_raises_pq() {
        // Growing oscillation injected after the change pushes features
        // away from the baseline manifold, flattening the posteriors.
        let mut significant = 0;
        for seed in 0..10 {
            let cfg = SynthConfig {
                seed,
                n_locations: 2,
                pixels_per_location: 20,
                count: 44,
                noise_model: NoiseModel::White,
                location_sigma_spread: 1.5,
                change_start: Some(24),
                post_change: PostChange {
                    variance_ramp: 1.25,
                    ramp_steps: usize::MAX,
                    oscillation_period: Some(4),
                    ..PostChange::default()
                },
                ..SynthConfig::default()
            };
            let spec = WindowSpec::new(16, 1, Detrend::Linear).unwrap();
            let dataset = generate(&cfg).unwrap();
            let matrices: Vec<PeriodogramMatrix> =
                dataset.iter().map(|s| dynamic_periodogram(s, &spec).unwrap()).collect();
            let x = window_cross_section(&matrices, 5).unwrap();
            let baseline = fit_baseline(&x, 2, 0.9, seed).unwrap();
            let traj = risk_trajectory(&matrices, &baseline).unwrap();
            let post: Vec<f64> = traj
                .points
                .iter()
                .filter(|pt| pt.window.index >= 9)
                .map(|pt| pt.median_pq)
                .collect();
            let (_, z) = kendall_tau(&post);
            if z > 1.645 {
                significant += 1;
            }
        }
        assert!(significant >= 8, "upward pq trend found in only {significant}/10 runs");
    }

    fn fake_traj(medians: &[f64]) -> RiskTrajectory {
        let grid = SampleGrid::new(
            chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            12,
            medians.len() + 16,
        )
        .unwrap();
        let spec = WindowSpec::new(16, 1, Detrend::Linear).unwrap();
        let windows = crate::series::grid_windows(&grid, &spec).unwrap();
        RiskTrajectory {
            baseline_window: windows[0],
            points: medians
                .iter()
                .enumerate()
                .map(|(i, &m)| RiskPoint {
                    window: windows[i + 1],
                    median_pq: m,
                    iqr_pq: 0.01,
                    n_pixels: 10,
                })
                .collect(),
        }
    }

    #[test]
    fn thresholds_sustained_crossings() {
        let traj = fake_traj(&[0.05, 0.10, 0.14, 0.15, 0.23, 0.24]);
        let report = detect_thresholds(&traj, 0.125, 0.225, 2).unwrap();
        assert_eq!(report.t_r.unwrap().index, traj.points[2].window.index);
        assert_eq!(report.t_i.unwrap().index, traj.points[4].window.index);
    }

    #[test]
    fn thresholds_absent_when_below() {
        let traj = fake_traj(&[0.05, 0.10, 0.12, 0.11]);
        let report = detect_thresholds(&traj, 0.125, 0.225, 2).unwrap();
        assert!(report.t_r.is_none());
        assert!(report.t_i.is_none());
    }

    #[test]
    fn thresholds_debounce_single_spike() {
        let traj = fake_traj(&[0.05, 0.24, 0.05, 0.23, 0.24, 0.24]);
        let report = detect_thresholds(&traj, 0.125, 0.225, 2).unwrap();
        assert_eq!(report.t_i.unwrap().index, traj.points[3].window.index);
        let first = detect_thresholds(&traj, 0.125, 0.225, 1).unwrap();
        assert_eq!(first.t_i.unwrap().index, traj.points[1].window.index);
    }

    #[test]
    fn thresholds_validate_config() {
        let traj = fake_traj(&[0.05]);
        assert!(detect_thresholds(&traj, 0.3, 0.4, 2).is_err());
        assert!(detect_thresholds(&traj, 0.2, 0.1, 2).is_err());
        assert!(detect_thresholds(&traj, 0.125, 0.225, 0).is_err());
    }
}
