//! Dynamic periodogram matrices, local-variance trajectories, and PCA
//! extraction of uncorrelated secondary spectral features.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{
    detrend, periodogram, windows, DisplacementSeries, Window, WindowSpec,
};
use crate::stats;

/// Identifies one pixel's series within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub location_id: String,
    pub pixel_id: String,
}

impl std::fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.location_id, self.pixel_id)
    }
}

/// Local periodogram ordinates of one pixel over all moving windows:
/// rows are frequencies k = 1..n/2, columns are windows l = 1..L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodogramMatrix {
    pub key: SeriesKey,
    pub spec: WindowSpec,
    pub windows: Vec<Window>,
    /// One column per window, each of length n/2.
    pub columns: Vec<Vec<f64>>,
}

impl PeriodogramMatrix {
    pub fn n_freqs(&self) -> usize {
        self.spec.n_ordinates()
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// Ordinates of the 1-based window `l`.
    pub fn column(&self, l: usize) -> Result<&[f64]> {
        if l == 0 || l > self.columns.len() {
            return Err(Error::IndexOutOfRange { index: l, count: self.columns.len() });
        }
        Ok(&self.columns[l - 1])
    }
}

/// Periodograms of all pixels at one window: rows are pixels, columns are
/// frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCrossSection {
    pub window: Window,
    pub keys: Vec<SeriesKey>,
    pub rows: Vec<Vec<f64>>,
}

/// Per-window local variance values for one labelled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalVarianceTrajectory {
    pub label: String,
    pub aggregation: Aggregation,
    pub windows: Vec<Window>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    PerPixel,
    SpatialMedian,
}

/// Compute every window's detrended local periodogram for one series.
pub fn dynamic_periodogram(
    series: &DisplacementSeries,
    spec: &WindowSpec,
) -> Result<PeriodogramMatrix> {
    let wins = windows(series, spec)?;
    let mut columns = Vec::with_capacity(wins.len());
    for w in &wins {
        let segment = &series.values[w.first_sample..=w.last_sample()];
        columns.push(periodogram(&detrend(segment, spec.detrend)?, spec)?);
    }
    Ok(PeriodogramMatrix {
        key: SeriesKey {
            location_id: series.location_id.clone(),
            pixel_id: series.pixel_id.clone(),
        },
        spec: *spec,
        windows: wins,
        columns,
    })
}

/// Reorder per-pixel matrices into the cross-section at window `l`
/// (1-based). All matrices must share the window spec and window count.
pub fn window_cross_section(
    matrices: &[PeriodogramMatrix],
    l: usize,
) -> Result<WindowCrossSection> {
    let first = matrices.first().ok_or(Error::EmptyInput("no periodogram matrices"))?;
    for m in matrices {
        if m.spec != first.spec || m.n_windows() != first.n_windows() {
            return Err(Error::SpecMismatch(format!(
                "pixel {} has spec/window layout differing from pixel {}",
                m.key, first.key
            )));
        }
    }
    if l == 0 || l > first.n_windows() {
        return Err(Error::IndexOutOfRange { index: l, count: first.n_windows() });
    }
    Ok(WindowCrossSection {
        window: first.windows[l - 1],
        keys: matrices.iter().map(|m| m.key.clone()).collect(),
        rows: matrices.iter().map(|m| m.columns[l - 1].clone()).collect(),
    })
}

/// Local variance of a window: the sum of its retained periodogram
/// ordinates (DC is zero after detrending).
pub fn local_variance(ordinates: &[f64]) -> f64 {
    ordinates.iter().sum()
}

/// Per-window local variances of one pixel.
pub fn pixel_local_variances(matrix: &PeriodogramMatrix) -> LocalVarianceTrajectory {
    LocalVarianceTrajectory {
        label: matrix.key.to_string(),
        aggregation: Aggregation::PerPixel,
        windows: matrix.windows.clone(),
        values: matrix.columns.iter().map(|c| local_variance(c)).collect(),
    }
}

/// Spatial median of the per-pixel local-variance trajectories. Even pixel
/// counts use the mid-average.
pub fn median_local_variance(
    matrices: &[PeriodogramMatrix],
    label: &str,
) -> Result<LocalVarianceTrajectory> {
    let first = matrices.first().ok_or(Error::EmptyInput("no periodogram matrices"))?;
    for m in matrices {
        if m.spec != first.spec || m.n_windows() != first.n_windows() {
            return Err(Error::SpecMismatch(format!(
                "pixel {} has spec/window layout differing from pixel {}",
                m.key, first.key
            )));
        }
    }
    let values = (0..first.n_windows())
        .map(|j| {
            let at_window: Vec<f64> =
                matrices.iter().map(|m| local_variance(&m.columns[j])).collect();
            stats::median(&at_window)
        })
        .collect();
    Ok(LocalVarianceTrajectory {
        label: label.to_string(),
        aggregation: Aggregation::SpatialMedian,
        windows: first.windows.clone(),
        values,
    })
}

/// Principal components of a window cross-section: orthonormal loadings
/// sorted by decreasing component variance, the feature means used for
/// centring, and the retained component count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_means: Vec<f64>,
    /// All eigenvalues of the feature covariance, non-increasing.
    pub component_variances: Vec<f64>,
    /// One loading vector per component, same order as the variances.
    pub loadings: Vec<Vec<f64>>,
    /// Number of leading components used by `project`.
    pub retained: usize,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.feature_means.len()
    }

    /// Fraction of total variance explained by the first `m` components.
    pub fn explained_fraction(&self, m: usize) -> f64 {
        let total: f64 = self.component_variances.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.component_variances.iter().take(m).sum::<f64>() / total
    }

    /// Scores of a feature vector on the retained components.
    pub fn project(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        Ok(self
            .loadings
            .iter()
            .take(self.retained)
            .map(|axis| {
                axis.iter()
                    .zip(features.iter().zip(&self.feature_means))
                    .map(|(a, (f, mu))| a * (f - mu))
                    .sum()
            })
            .collect())
    }
}

/// Fit PCA to the rows of a cross-section. `var_target` selects the
/// smallest component count whose cumulative explained variance reaches
/// the target.
pub fn pca_fit(x: &WindowCrossSection, var_target: f64) -> Result<PcaModel> {
    let v = x.rows.len();
    if v < 2 {
        return Err(Error::TooShort { needed: 2, have: v });
    }
    if !(0.0..=1.0).contains(&var_target) {
        return Err(Error::InvalidConfig(format!(
            "pca variance target must lie in [0,1], got {var_target}"
        )));
    }
    let d = x.rows[0].len();
    for row in &x.rows {
        if row.len() != d {
            return Err(Error::LengthMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|f| !f.is_finite()) {
            return Err(Error::DegenerateInput("non-finite feature entry"));
        }
    }

    let mut means = vec![0.0; d];
    for row in &x.rows {
        for (m, f) in means.iter_mut().zip(row) {
            *m += f;
        }
    }
    for m in &mut means {
        *m /= v as f64;
    }

    // Sample covariance of centred rows, divisor v - 1.
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in &x.rows {
        for i in 0..d {
            let ci = row[i] - means[i];
            for j in i..d {
                cov[(i, j)] += ci * (row[j] - means[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let val = cov[(i, j)] / (v - 1) as f64;
            cov[(i, j)] = val;
            cov[(j, i)] = val;
        }
    }

    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });

    let mut variances = Vec::with_capacity(d);
    let mut loadings = Vec::with_capacity(d);
    for &idx in &order {
        variances.push(eigen.eigenvalues[idx].max(0.0));
        let mut axis: Vec<f64> = eigen.eigenvectors.column(idx).iter().copied().collect();
        // Eigenvectors are sign-ambiguous; make the largest-magnitude
        // entry positive so fits are deterministic.
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if axis[lead] < 0.0 {
            for a in &mut axis {
                *a = -*a;
            }
        }
        loadings.push(axis);
    }

    let total: f64 = variances.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("zero total feature variance"));
    }
    let mut retained = d;
    let mut cum = 0.0;
    for (i, lambda) in variances.iter().enumerate() {
        cum += lambda;
        if cum >= var_target * total {
            retained = i + 1;
            break;
        }
    }

    Ok(PcaModel { feature_means: means, component_variances: variances, loadings, retained })
}

/// Free-function form of [`PcaModel::project`].
pub fn pca_project(model: &PcaModel, features: &[f64]) -> Result<Vec<f64>> {
    model.project(features)
}
