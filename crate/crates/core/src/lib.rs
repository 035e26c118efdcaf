//! Early-warning analysis of regularly sampled displacement fields.
//!
//! The library detects the transition of a deforming slope (or any regular
//! displacement field) out of a second-order stationary regime and tracks
//! the subsequent risk of failure in two phases:
//!
//! 1. moving-window periodograms summarise each pixel's evolving spectrum;
//!    inflections of the spatial-median local variance propose candidate
//!    regime-change windows, and k-medoids clustering of PCA spectral
//!    features selects the baseline window by inter-cluster variance;
//! 2. every later window is classified against the baseline clusters and
//!    the spatial Median(pq)/IQR(pq) of the classification uncertainty is
//!    tracked until it crosses the staged emergent-risk and imminent-risk
//!    levels.
//!
//! Modules follow the pipeline: [`series`] (containers, windows,
//! periodograms), [`spectral`] (dynamic periodogram matrices and PCA),
//! [`regime`] (candidate detection, clustering, baseline selection),
//! [`risk`] (classification, pq trajectory, warnings), and [`synth`]
//! (seeded synthetic data plus brute-force oracles for testing).

pub mod error;
pub mod regime;
pub mod risk;
pub mod series;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
