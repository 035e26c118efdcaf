//! Seeded synthetic displacement datasets with known ground truth, plus
//! the independent brute-force oracles used by the test and acceptance
//! suites.
//!
//! Pixels are stationary white or AR(1) processes until an optional change
//! sample, after which a configurable response is applied: a variance ramp
//! that may relax back toward baseline, a linear trend, and an optional
//! growing oscillation. Per-pixel streams draw from independently derived
//! sub-seeds, so generation order never affects the data.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regime::{assignment_cost, clustering_from_medoids, dissimilarity_matrix, Clustering};
use crate::series::{DisplacementSeries, SampleGrid};

/// Serial-correlation model of the pre-change noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    White,
    Ar1 { phi: f64 },
}

/// Post-change response. The variance envelope grows by `variance_ramp`
/// (a standard-deviation factor) per step for `ramp_steps` steps, then the
/// excess relaxes as exp(-relax_rate * steps); `relax_rate` 0 holds the
/// plateau and `ramp_steps` 0 disables the envelope entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostChange {
    /// Mean drift in mm per step after the change.
    pub trend_slope: f64,
    /// Standard-deviation factor per ramp step.
    pub variance_ramp: f64,
    /// Number of steps the ramp grows before relaxing.
    pub ramp_steps: usize,
    /// Exponential relaxation rate of the excess after the ramp peak.
    pub relax_rate: f64,
    /// Period (in samples) of an injected oscillation burst.
    pub oscillation_period: Option<usize>,
    /// Oscillation amplitude at the change sample, in units of the
    /// baseline noise level.
    pub oscillation_amp: f64,
    /// Exponential decay rate of the oscillation amplitude per step.
    pub oscillation_relax: f64,
    /// Spread of per-location oscillation gains over
    /// [1 - spread, 1 + spread].
    pub oscillation_gain_spread: f64,
    /// Spread of per-location gains applied to the variance envelope and
    /// the trend: gains run linearly over [1 - spread, 1 + spread]. A
    /// negative spread inverts the orientation, giving the strongest
    /// response to the first location.
    pub location_gain_spread: f64,
}

impl Default for PostChange {
    fn default() -> Self {
        Self {
            trend_slope: 0.0,
            variance_ramp: 1.0,
            ramp_steps: 0,
            relax_rate: 0.0,
            oscillation_period: None,
            oscillation_amp: 0.0,
            location_gain_spread: 0.0,
        }
    }
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_locations: usize,
    pub pixels_per_location: usize,
    pub count: usize,
    pub interval_days: u32,
    pub start_date: NaiveDate,
    pub noise_model: NoiseModel,
    /// Baseline noise standard deviation in mm.
    pub base_sigma: f64,
    /// Spread of baseline sigma across locations: location l of L gets
    /// base_sigma * (1 + spread * l / (L - 1)).
    pub location_sigma_spread: f64,
    /// 1-based sample index at which post-change dynamics begin.
    pub change_start: Option<usize>,
    pub post_change: PostChange,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_locations: 6,
            pixels_per_location: 20,
            count: 44,
            interval_days: 12,
            start_date: NaiveDate::from_ymd_opt(2017, 8, 19).unwrap(),
            noise_model: NoiseModel::White,
            base_sigma: 1.0,
            location_sigma_spread: 0.0,
            change_start: None,
            post_change: PostChange::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_locations == 0 || self.pixels_per_location == 0 {
            return Err(Error::InvalidConfig("need at least one location and pixel".into()));
        }
        if self.count < 2 {
            return Err(Error::InvalidConfig("count must be >= 2".into()));
        }
        if self.interval_days == 0 {
            return Err(Error::InvalidConfig("interval_days must be >= 1".into()));
        }
        if !(self.base_sigma.is_finite() && self.base_sigma > 0.0) {
            return Err(Error::InvalidConfig("base_sigma must be positive".into()));
        }
        if !(self.location_sigma_spread.is_finite() && self.location_sigma_spread >= 0.0) {
            return Err(Error::InvalidConfig("location_sigma_spread must be >= 0".into()));
        }
        if let NoiseModel::Ar1 { phi } = self.noise_model {
            if !(phi.is_finite() && phi.abs() < 1.0) {
                return Err(Error::InvalidConfig(format!("AR(1) phi must satisfy |phi| < 1, got {phi}")));
            }
        }
        if let Some(c) = self.change_start {
            if c == 0 || c >= self.count {
                return Err(Error::InvalidConfig(format!(
                    "change_start must lie in 1..count ({}), got {c}",
                    self.count
                )));
            }
        }
        let pc = &self.post_change;
        if !(pc.variance_ramp.is_finite() && pc.variance_ramp > 0.0) {
            return Err(Error::InvalidConfig("variance_ramp must be positive".into()));
        }
        if !(pc.relax_rate.is_finite() && pc.relax_rate >= 0.0) {
            return Err(Error::InvalidConfig("relax_rate must be >= 0".into()));
        }
        if !pc.trend_slope.is_finite() {
            return Err(Error::InvalidConfig("trend_slope must be finite".into()));
        }
        if !(-1.0..=1.0).contains(&pc.location_gain_spread) {
            return Err(Error::InvalidConfig("location_gain_spread must lie in [-1,1]".into()));
        }
        if !(pc.oscillation_amp.is_finite() && pc.oscillation_amp >= 0.0) {
            return Err(Error::InvalidConfig("oscillation_amp must be >= 0".into()));
        }
        if let Some(p) = pc.oscillation_period {
            if p < 2 {
                return Err(Error::InvalidConfig("oscillation_period must be >= 2".into()));
            }
        }
        Ok(())
    }
}

/// Envelope multiplier g(j) for the j-th step since the change (0-based).
fn envelope(pc: &PostChange, j: usize) -> f64 {
    if pc.ramp_steps == 0 {
        return 1.0;
    }
    let grown = (j + 1).min(pc.ramp_steps);
    let g = pc.variance_ramp.powi(grown as i32);
    if j + 1 <= pc.ramp_steps {
        g
    } else {
        1.0 + (g - 1.0) * (-pc.relax_rate * (j + 1 - pc.ramp_steps) as f64).exp()
    }
}

fn pixel_rng(seed: u64, location: usize, pixel: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(location as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(pixel as u64).to_le_bytes());
    key[24..].copy_from_slice(b"slopesyn");
    ChaCha8Rng::from_seed(key)
}

/// Generate one series per (location, pixel). Deterministic given the
/// seed; sub-seeds make pixels independent of generation order.
pub fn generate(config: &SynthConfig) -> Result<Vec<DisplacementSeries>> {
    config.validate()?;
    let grid = SampleGrid::new(config.start_date, config.interval_days, config.count)?;
    let loc_div = (config.n_locations.max(2) - 1) as f64;
    let mut out = Vec::with_capacity(config.n_locations * config.pixels_per_location);
    for loc in 0..config.n_locations {
        let frac = loc as f64 / loc_div;
        let base_sd = config.base_sigma * (1.0 + config.location_sigma_spread * frac);
        let gain = 1.0 + config.post_change.location_gain_spread * (frac - 0.5) * 2.0;
        for pix in 0..config.pixels_per_location {
            let mut rng = pixel_rng(config.seed, loc, pix);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut values = Vec::with_capacity(config.count);
            let mut prev = 0.0;
            for t in 0..config.count {
                // Steps since the first changed sample, when past it.
                let since = config
                    .change_start
                    .and_then(|c| (t + 1).checked_sub(c));
                let g = since.map_or(1.0, |j| envelope(&config.post_change, j));
                let sd = base_sd * (1.0 + gain * (g - 1.0)).max(0.05);
                let eps: f64 = StandardNormal.sample(&mut rng);
                let x = match config.noise_model {
                    NoiseModel::White => sd * eps,
                    NoiseModel::Ar1 { phi } => {
                        if t == 0 {
                            sd * eps
                        } else {
                            phi * prev + sd * (1.0 - phi * phi).sqrt() * eps
                        }
                    }
                };
                prev = x;
                let mut v = x;
                if let Some(j) = since {
                    v += gain * config.post_change.trend_slope * (j + 1) as f64;
                    if let Some(period) = config.post_change.oscillation_period {
                        let amp =
                            base_sd * config.post_change.oscillation_amp * gain * (g - 1.0);
                        let arg = std::f64::consts::TAU * t as f64 / period as f64 + phase;
                        v += amp * arg.cos();
                    }
                }
                values.push(v);
            }
            out.push(DisplacementSeries {
                location_id: format!("location_{}", loc + 1),
                pixel_id: format!("p{:03}", pix + 1),
                grid,
                values,
            });
        }
    }
    Ok(out)
}

/// Direct O(n^2) discrete Fourier transform, d(w_k) with the 1/sqrt(n)
/// normalisation and the sum running over t = 1..n. Reference
/// implementation for periodogram tests; no fast transform involved.
pub fn oracle_dft(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let norm = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            let w = std::f64::consts::TAU * k as f64 / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &y) in values.iter().enumerate() {
                let angle = -w * (t + 1) as f64;
                acc += Complex64::new(angle.cos(), angle.sin()) * y;
            }
            acc * norm
        })
        .collect()
}

/// Monte Carlo moments of M(p-hat) = p-hat(1 - p-hat), where p-hat is a
/// binomial proportion of n draws at success probability p.
pub fn oracle_pq_moments(p: f64, n: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::DomainError(format!("p out of [0,1]: {p}")));
    }
    if n == 0 {
        return Err(Error::DomainError("n must be >= 1".into()));
    }
    if trials < 10_000 {
        return Err(Error::InvalidConfig(format!("need >= 10000 trials, got {trials}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bin = Binomial::new(n as u64, p)
        .map_err(|e| Error::InvalidConfig(format!("binomial: {e}")))?;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..trials {
        let phat = bin.sample(&mut rng) as f64 / n as f64;
        let m = phat * (1.0 - phat);
        let delta = m - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (m - mean);
    }
    Ok((mean, m2 / (trials - 1) as f64))
}

/// Exact mean, variance and central fourth moment of M(p-hat) by direct
/// summation over the binomial distribution.
pub fn exact_pq_moments(p: f64, n: usize) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::DomainError(format!("p out of [0,1]: {p}")));
    }
    if n == 0 {
        return Err(Error::DomainError("n must be >= 1".into()));
    }
    let nf = n as f64;
    let mut pmf = vec![0.0; n + 1];
    if p == 0.0 {
        pmf[0] = 1.0;
    } else if p == 1.0 {
        pmf[n] = 1.0;
    } else {
        let ratio = p / (1.0 - p);
        pmf[0] = (1.0 - p).powi(n as i32);
        for k in 0..n {
            pmf[k + 1] = pmf[k] * ratio * (nf - k as f64) / (k as f64 + 1.0);
        }
    }
    let m = |k: usize| {
        let phat = k as f64 / nf;
        phat * (1.0 - phat)
    };
    let mean: f64 = (0..=n).map(|k| pmf[k] * m(k)).sum();
    let var: f64 = (0..=n).map(|k| pmf[k] * (m(k) - mean).powi(2)).sum();
    let mu4: f64 = (0..=n).map(|k| pmf[k] * (m(k) - mean).powi(4)).sum();
    Ok((mean, var, mu4))
}

/// Exhaustive k-medoids reference: the global optimum over all medoid
/// subsets, feasible only at desk scale (n <= 12, k <= 3).
pub fn oracle_kmedoids(features: &[Vec<f64>], k: usize) -> Result<Clustering> {
    let n = features.len();
    if n == 0 {
        return Err(Error::EmptyInput("no feature rows"));
    }
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, items: n });
    }
    if n > 12 || k > 3 {
        return Err(Error::TooLarge { items: n, k });
    }
    let dis = dissimilarity_matrix(features)?;
    let mut best_cost = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let cost = assignment_cost(&dis, &idx);
        if cost < best_cost - 1e-15 {
            best_cost = cost;
            best = idx.clone();
        }
        // Advance to the next ascending combination.
        let mut i = k as isize - 1;
        while i >= 0 && idx[i as usize] == n - k + i as usize {
            i -= 1;
        }
        if i < 0 {
            break;
        }
        let i = i as usize;
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    clustering_from_medoids(features, &best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::autocovariance;
    use crate::spectral::{dynamic_periodogram, median_local_variance};
    use approx::assert_abs_diff_eq;

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig { seed: 123, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 124, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_layout_and_grid() {
        let cfg = SynthConfig::default();
        let data = generate(&cfg).unwrap();
        assert_eq!(data.len(), 120);
        assert_eq!(data[0].location_id, "location_1");
        assert_eq!(data[0].pixel_id, "p001");
        assert_eq!(data[0].grid.count, 44);
        assert_eq!(data[0].grid.interval_days, 12);
    }

    #[test]
    fn white_noise_has_no_lag_one_correlation() {
        let cfg = SynthConfig {
            seed: 5,
            n_locations: 1,
            pixels_per_location: 50,
            count: 200,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let mean_r1: f64 = data
            .iter()
            .map(|s| {
                autocovariance(&s.values, 1).unwrap() / autocovariance(&s.values, 0).unwrap()
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!(mean_r1.abs() < 3.0 / (200.0_f64).sqrt(), "mean r1 = {mean_r1}");
    }

    #[test]
    fn ar1_matches_theoretical_lag_one() {
        let cfg = SynthConfig {
            seed: 6,
            n_locations: 1,
            pixels_per_location: 80,
            count: 200,
            noise_model: NoiseModel::Ar1 { phi: 0.6 },
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let mean_r1: f64 = data
            .iter()
            .map(|s| {
                autocovariance(&s.values, 1).unwrap() / autocovariance(&s.values, 0).unwrap()
            })
            .sum::<f64>()
            / data.len() as f64;
        assert_abs_diff_eq!(mean_r1, 0.6, epsilon = 0.05);
    }

    #[test]
    fn pre_change_local_variance_is_homogeneous() {
        let cfg = SynthConfig {
            seed: 7,
            n_locations: 1,
            pixels_per_location: 40,
            count: 44,
            ..SynthConfig::default()
        };
        let spec = crate::series::WindowSpec::new(16, 1, crate::series::Detrend::Linear).unwrap();
        let data = generate(&cfg).unwrap();
        let matrices: Vec<_> =
            data.iter().map(|s| dynamic_periodogram(s, &spec).unwrap()).collect();
        let med = median_local_variance(&matrices, "all").unwrap();
        let max = med.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = med.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 2.0, "stationary median trajectory ratio {}", max / min);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_phi = SynthConfig {
            noise_model: NoiseModel::Ar1 { phi: 1.0 },
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&bad_phi), Err(Error::InvalidConfig(_))));
        let bad_change = SynthConfig { change_start: Some(44), ..SynthConfig::default() };
        assert!(matches!(generate(&bad_change), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn oracle_dft_unit_impulse() {
        let d = oracle_dft(&[1.0, 0.0, 0.0, 0.0]);
        for c in d {
            assert_abs_diff_eq!(c.norm(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_dft_constant_vector() {
        let d = oracle_dft(&[2.0; 8]);
        assert_abs_diff_eq!(d[0].norm_sqr(), 32.0, epsilon = 1e-10);
        for c in &d[1..] {
            assert_abs_diff_eq!(c.norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn oracle_dft_linearity() {
        let a = [0.3, -1.2, 0.8, 2.0, -0.5, 0.1];
        let b = [1.0, 0.4, -0.9, 0.2, 0.7, -1.4];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let da = oracle_dft(&a);
        let db = oracle_dft(&b);
        let ds = oracle_dft(&sum);
        for k in 0..a.len() {
            assert_abs_diff_eq!((da[k] + db[k]).re, ds[k].re, epsilon = 1e-12);
            assert_abs_diff_eq!((da[k] + db[k]).im, ds[k].im, epsilon = 1e-12);
        }
    }

    #[test]
    fn pq_oracle_degenerate_cases() {
        let (mean, var) = oracle_pq_moments(1.0, 50, 10_000, 1).unwrap();
        assert_eq!((mean, var), (0.0, 0.0));
        assert!(oracle_pq_moments(0.5, 50, 100, 1).is_err());
    }

    #[test]
    fn pq_oracle_documents_finite_sample_bias() {
        // E{M(p-hat)} = pq (1 - 1/n) exactly; at p = 0.5, n = 100 that is
        // 0.2475.
        let (ex_mean, ex_var, _) = exact_pq_moments(0.5, 100).unwrap();
        assert_abs_diff_eq!(ex_mean, 0.2475, epsilon = 1e-12);
        let (mc_mean, mc_var) = oracle_pq_moments(0.5, 100, 200_000, 3).unwrap();
        let se = (ex_var / 200_000.0).sqrt();
        assert!((mc_mean - ex_mean).abs() < 4.0 * se, "mc {mc_mean} vs exact {ex_mean}");
        assert!((mc_var - ex_var).abs() < 0.05 * ex_var);
    }

    #[test]
    fn exact_mean_identity() {
        for &(p, n) in &[(0.1, 20usize), (0.25, 100), (0.7, 33)] {
            let (mean, _, _) = exact_pq_moments(p, n).unwrap();
            let pq = p * (1.0 - p);
            assert_abs_diff_eq!(mean, pq * (1.0 - 1.0 / n as f64), epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_kmedoids_small_cases() {
        let two = vec![vec![0.0], vec![5.0]];
        let c = oracle_kmedoids(&two, 2).unwrap();
        assert_eq!(c.medoids, vec![0, 1]);
        assert_eq!(c.total_within, 0.0);

        let mut pts = Vec::new();
        for d in [-0.2, 0.0, 0.2] {
            pts.push(vec![d, 0.0]);
        }
        for d in [-0.2, 0.0, 0.2] {
            pts.push(vec![8.0 + d, 0.0]);
        }
        let c = oracle_kmedoids(&pts, 2).unwrap();
        assert_eq!(c.medoids, vec![1, 4]);
        assert!(matches!(oracle_kmedoids(&pts, 4), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn oracle_never_loses_to_heuristic() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for trial in 0..30 {
            let n = rng.random_range(5..=12);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..2).map(|_| rng.random_range(-4.0..4.0)).collect())
                .collect();
            let k = rng.random_range(2..=3);
            let opt = oracle_kmedoids(&pts, k).unwrap();
            let heur = crate::regime::kmedoids(&pts, k, trial).unwrap();
            assert!(opt.total_within <= heur.total_within + 1e-9);
        }
    }
}
