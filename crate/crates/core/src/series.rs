//! Time-series containers, windowing, detrending, autocovariance and
//! periodogram estimation.
//!
//! Everything here is a pure function over immutable values; callers may
//! invoke any of it concurrently.

use chrono::NaiveDate;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular sampling grid: `count` samples starting at `start_date`, one
/// every `interval_days`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub start_date: NaiveDate,
    pub interval_days: u32,
    pub count: usize,
}

impl SampleGrid {
    pub fn new(start_date: NaiveDate, interval_days: u32, count: usize) -> Result<Self> {
        if interval_days == 0 {
            return Err(Error::InvalidConfig("interval_days must be positive".into()));
        }
        if count < 2 {
            return Err(Error::TooShort { needed: 2, have: count });
        }
        Ok(Self { start_date, interval_days, count })
    }

    /// Date of the zero-based sample `i`. Exact integer date arithmetic.
    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(self.interval_days as u64 * i as u64)
    }

    pub fn last_date(&self) -> NaiveDate {
        self.date_at(self.count - 1)
    }
}

/// One pixel's regularly sampled relative line-of-sight displacement
/// record, in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSeries {
    pub location_id: String,
    pub pixel_id: String,
    pub grid: SampleGrid,
    pub values: Vec<f64>,
}

impl DisplacementSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Detrending applied to each window before spectral estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    None,
    MeanOnly,
    Linear,
}

impl std::fmt::Display for Detrend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Detrend::None => write!(f, "none"),
            Detrend::MeanOnly => write!(f, "mean_only"),
            Detrend::Linear => write!(f, "linear"),
        }
    }
}

/// Moving-window layout: windows of `length` samples advancing by `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub step: usize,
    pub detrend: Detrend,
}

impl WindowSpec {
    pub fn new(length: usize, step: usize, detrend: Detrend) -> Result<Self> {
        if length < 2 || length % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "window length must be even and >= 2, got {length}"
            )));
        }
        if step == 0 {
            return Err(Error::InvalidConfig("window step must be >= 1".into()));
        }
        Ok(Self { length, step, detrend })
    }

    /// Number of retained periodogram ordinates (k = 1..length/2).
    pub fn n_ordinates(&self) -> usize {
        self.length / 2
    }

    /// Number of windows available over `count` samples.
    pub fn window_count(&self, count: usize) -> Result<usize> {
        if count < self.length {
            return Err(Error::TooShort { needed: self.length, have: count });
        }
        Ok((count - self.length) / self.step + 1)
    }
}

/// One moving window: 1-based `index`, zero-based `first_sample`, and the
/// dates of its first and last samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub first_sample: usize,
    pub length: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

impl Window {
    pub fn last_sample(&self) -> usize {
        self.first_sample + self.length - 1
    }
}

/// Local periodogram of one window: ordinates at the Fourier frequencies
/// k = 1..n/2 (DC excluded; windows are detrended).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodogramVector {
    pub window: Window,
    pub ordinates: Vec<f64>,
}

impl PeriodogramVector {
    /// Fourier frequency of the ordinate at position `i` (k = i + 1).
    pub fn fourier_freq(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * (i + 1) as f64 / self.window.length as f64
    }
}

/// Build a validated series from dated samples. The sampling interval is
/// inferred and must be the unique gap between consecutive dates.
pub fn validate_series(
    raw: &[(NaiveDate, f64)],
    location_id: &str,
    pixel_id: &str,
) -> Result<DisplacementSeries> {
    if raw.len() < 2 {
        return Err(Error::TooShort { needed: 2, have: raw.len() });
    }
    let interval = (raw[1].0 - raw[0].0).num_days();
    if interval <= 0 {
        return Err(Error::IrregularSampling { expected: interval, found: interval, index: 1 });
    }
    for (i, pair) in raw.windows(2).enumerate() {
        let gap = (pair[1].0 - pair[0].0).num_days();
        if gap != interval {
            return Err(Error::IrregularSampling { expected: interval, found: gap, index: i + 1 });
        }
    }
    for (i, &(_, v)) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
    }
    let grid = SampleGrid::new(raw[0].0, interval as u32, raw.len())?;
    Ok(DisplacementSeries {
        location_id: location_id.to_string(),
        pixel_id: pixel_id.to_string(),
        grid,
        values: raw.iter().map(|&(_, v)| v).collect(),
    })
}

/// Enumerate the moving windows of `series` under `spec`.
pub fn windows(series: &DisplacementSeries, spec: &WindowSpec) -> Result<Vec<Window>> {
    grid_windows(&series.grid, spec)
}

/// Enumerate moving windows directly over a sampling grid.
pub fn grid_windows(grid: &SampleGrid, spec: &WindowSpec) -> Result<Vec<Window>> {
    let count = spec.window_count(grid.count)?;
    Ok((0..count)
        .map(|i| {
            let first = i * spec.step;
            Window {
                index: i + 1,
                first_sample: first,
                length: spec.length,
                start_date: grid.date_at(first),
                end_date: grid.date_at(first + spec.length - 1),
            }
        })
        .collect())
}

/// Sample mean and variance of one window (variance divisor n - 1).
pub fn window_mean_variance(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, have: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((mean, ss / (n - 1) as f64))
}

/// Remove the configured trend from a window of values.
///
/// `MeanOnly` subtracts the sample mean; `Linear` subtracts the
/// least-squares line, leaving a residual orthogonal to both the constant
/// and the ramp regressor.
pub fn detrend(values: &[f64], method: Detrend) -> Result<Vec<f64>> {
    let n = values.len();
    match method {
        Detrend::None => {
            if n < 2 {
                return Err(Error::TooShort { needed: 2, have: n });
            }
            Ok(values.to_vec())
        }
        Detrend::MeanOnly => {
            if n < 2 {
                return Err(Error::TooShort { needed: 2, have: n });
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            Ok(values.iter().map(|v| v - mean).collect())
        }
        Detrend::Linear => {
            if n < 3 {
                return Err(Error::TooShort { needed: 3, have: n });
            }
            let t_mean = (n - 1) as f64 / 2.0;
            let y_mean = values.iter().sum::<f64>() / n as f64;
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            for (t, &y) in values.iter().enumerate() {
                let dt = t as f64 - t_mean;
                sxy += dt * (y - y_mean);
                sxx += dt * dt;
            }
            let slope = sxy / sxx;
            Ok(values
                .iter()
                .enumerate()
                .map(|(t, &y)| y - y_mean - slope * (t as f64 - t_mean))
                .collect())
        }
    }
}

/// Biased (1/n) sample autocovariance at a signed lag. The sample mean is
/// removed internally, so pre-centred input is handled identically.
pub fn autocovariance(values: &[f64], lag: i64) -> Result<f64> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyInput("autocovariance over empty series"));
    }
    let u = lag.unsigned_abs() as usize;
    if u >= n {
        return Err(Error::LagOutOfRange { lag, len: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sum: f64 = (0..n - u)
        .map(|t| (values[t] - mean) * (values[t + u] - mean))
        .sum();
    Ok(sum / n as f64)
}

/// Full periodogram I(w_k) = |d(w_k)|^2 for k = 0..n-1, where d is the
/// n^(-1/2)-normalised DFT. Parseval holds over this set:
/// sum_k I(w_k) = sum_t y_t^2.
pub fn full_periodogram(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, have: n });
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.norm_sqr() / n as f64).collect())
}

/// Periodogram ordinates I(w_k), k = 1..n/2, of an already windowed and
/// detrended vector of length `spec.length`.
pub fn periodogram(values: &[f64], spec: &WindowSpec) -> Result<Vec<f64>> {
    if values.len() != spec.length {
        return Err(Error::LengthMismatch { expected: spec.length, got: values.len() });
    }
    let full = full_periodogram(values)?;
    Ok(full[1..=spec.length / 2].to_vec())
}

/// Detrend one window of a series and compute its local periodogram.
pub fn window_periodogram(
    series: &DisplacementSeries,
    spec: &WindowSpec,
    window: &Window,
) -> Result<PeriodogramVector> {
    let end = window.last_sample() + 1;
    if end > series.len() || window.length != spec.length {
        return Err(Error::SpecMismatch(format!(
            "window {} (samples {}..{}) does not fit series of length {}",
            window.index,
            window.first_sample,
            window.last_sample(),
            series.len()
        )));
    }
    let segment = detrend(&series.values[window.first_sample..end], spec.detrend)?;
    Ok(PeriodogramVector { window: *window, ordinates: periodogram(&segment, spec)? })
}
