//! Sample-based scoring of pose posteriors.
//!
//! A query is a true positive at a threshold when at least a fraction `γ` of
//! its posterior samples lie within both the translation and the rotation
//! threshold of the ground truth. Recall is the share of true-positive
//! queries. Point estimates average the samples (arithmetic mean for
//! translation, chordal L2 mean for rotation) and are scored by median
//! errors.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{chordal_l2_mean, pose_distance, Pose};
use crate::scenes::{ModeSet, Trajectory};

/// Ratio for mildly ambiguous scenes.
pub const GAMMA_MILD: f64 = 0.1;
/// Ratio for severely ambiguous scenes.
pub const GAMMA_SEVERE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Scene units.
    pub translation: f64,
    /// Degrees.
    pub rotation_deg: f64,
}

impl Threshold {
    pub const fn new(translation: f64, rotation_deg: f64) -> Self {
        Threshold {
            translation,
            rotation_deg,
        }
    }

    pub fn admits(&self, (dt, dr): (f64, f64)) -> bool {
        dt <= self.translation && dr <= self.rotation_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecallSpec {
    pub thresholds: Vec<Threshold>,
    pub gamma: f64,
}

impl RecallSpec {
    /// The three paired thresholds 0.1/10°, 0.2/15° and 0.3/20°.
    pub fn standard(gamma: f64) -> Self {
        RecallSpec {
            thresholds: vec![
                Threshold::new(0.1, 10.0),
                Threshold::new(0.2, 15.0),
                Threshold::new(0.3, 20.0),
            ],
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidConfig("recall needs at least one threshold".into()));
        }
        if self
            .thresholds
            .iter()
            .any(|t| !(t.translation > 0.0 && t.rotation_deg > 0.0))
        {
            return Err(Error::InvalidConfig("recall thresholds must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

impl Default for RecallSpec {
    fn default() -> Self {
        RecallSpec::standard(GAMMA_MILD)
    }
}

/// Number of samples within `threshold` of `truth` on both components.
pub fn count_within(samples: &[Pose], truth: &Pose, threshold: Threshold) -> usize {
    samples
        .iter()
        .filter(|s| threshold.admits(pose_distance(s, truth)))
        .count()
}

/// True when at least a fraction `gamma` of `samples` lies within
/// `threshold` of `truth`. An empty sample set is never a true positive.
pub fn recall_single(samples: &[Pose], truth: &Pose, threshold: Threshold, gamma: f64) -> bool {
    !samples.is_empty() && count_within(samples, truth, threshold) as f64 >= gamma * samples.len() as f64
}

/// Per-threshold outcome of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: usize,
    pub count: usize,
    pub within: Vec<usize>,
    pub true_positive: Vec<bool>,
}

pub fn evaluate_query(query_id: usize, samples: &[Pose], truth: &Pose, spec: &RecallSpec) -> QueryResult {
    let within: Vec<usize> = spec
        .thresholds
        .iter()
        .map(|&t| count_within(samples, truth, t))
        .collect();
    let true_positive = within
        .iter()
        .map(|&w| !samples.is_empty() && w as f64 >= spec.gamma * samples.len() as f64)
        .collect();
    QueryResult {
        query_id,
        count: samples.len(),
        within,
        true_positive,
    }
}

/// Fraction of true-positive queries per threshold.
pub fn recall_aggregate(results: &[QueryResult]) -> Vec<f64> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    (0..first.true_positive.len())
        .map(|k| {
            results.iter().filter(|r| r.true_positive[k]).count() as f64 / results.len() as f64
        })
        .collect()
}

/// Mean translation and chordal L2 mean rotation of the samples.
pub fn point_estimate(samples: &[Pose]) -> Result<Pose> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let translation =
        samples.iter().map(|p| p.translation).sum::<Vector3<f64>>() / samples.len() as f64;
    let rotations: Vec<_> = samples.iter().map(|p| p.rotation).collect();
    Ok(Pose::new(chordal_l2_mean(&rotations)?, translation))
}

/// Lower-middle element for even lengths.
fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Median translation error and median rotation error in degrees.
pub fn median_errors(estimates: &[Pose], truths: &[Pose]) -> Result<(f64, f64)> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truths.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::EmptySamples);
    }
    let (dt, dr): (Vec<f64>, Vec<f64>) = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| pose_distance(e, t))
        .unzip();
    Ok((lower_median(dt), lower_median(dr)))
}

/// Scalar projection of a pose used for marginal densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    /// One translation component (0, 1 or 2).
    Translation(usize),
    /// Translation projected on a direction.
    Along([f64; 3]),
}

impl Axis {
    pub fn value(&self, pose: &Pose) -> f64 {
        match *self {
            Axis::Translation(i) => pose.translation[i],
            Axis::Along(d) => pose.translation.dot(&Vector3::from(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Grid indices of strict interior local maxima.
    pub fn local_maxima(&self) -> Vec<usize> {
        let d = &self.density;
        (1..d.len().saturating_sub(1))
            .filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1])
            .collect()
    }

    /// Two columns, `coordinate density`, one grid point per line.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# bandwidth={:.16e}", self.bandwidth)?;
        for (x, y) in self.grid.iter().zip(&self.density) {
            writeln!(w, "{x:.16e} {y:.16e}")?;
        }
        Ok(())
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Gaussian kernel density estimate of scalar `values` on `grid`.
///
/// The bandwidth is Silverman's `1.06·σ̂·n^(−1/5)` unless given. Inputs with
/// no spread become one narrow Gaussian with bandwidth `1e-3` of the grid
/// span.
pub fn kde(values: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<DensityCurve> {
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "density grid needs at least two strictly ascending points".into(),
        ));
    }
    let n = values.len() as f64;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidConfig(format!("bandwidth {h} must be positive"))),
        None => {
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            if var > 0.0 {
                1.06 * var.sqrt() * n.powf(-0.2)
            } else {
                1e-3 * (grid[grid.len() - 1] - grid[0])
            }
        }
    };
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(DensityCurve {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
    })
}

/// Marginal density of the samples along `axis`.
pub fn kde_marginal(
    samples: &[Pose],
    axis: Axis,
    grid: &[f64],
    bandwidth: Option<f64>,
) -> Result<DensityCurve> {
    let values: Vec<f64> = samples.iter().map(|p| axis.value(p)).collect();
    kde(&values, grid, bandwidth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    /// Modes holding at least the required mass.
    pub covered: usize,
    /// Fraction of samples near each mode, in region order.
    pub masses: Vec<f64>,
}

/// How the samples distribute over the ground-truth modes.
///
/// A sample counts for a mode when it lies within `threshold` of the
/// region's nearest pose; a mode is covered when its mass reaches
/// `gamma_mode`.
pub fn mode_coverage(
    samples: &[Pose],
    trajectory: &Trajectory,
    modes: &ModeSet,
    threshold: Threshold,
    gamma_mode: f64,
) -> ModeCoverage {
    let n = samples.len().max(1) as f64;
    let masses: Vec<f64> = modes
        .regions
        .iter()
        .map(|region| {
            samples
                .iter()
                .filter(|p| threshold.admits(region.distance(trajectory, p)))
                .count() as f64
                / n
        })
        .collect();
    ModeCoverage {
        covered: masses.iter().filter(|&&m| m >= gamma_mode).count(),
        masses,
    }
}

/// Per-query recall table followed by `#` footer lines with the aggregate
/// recall per threshold.
pub fn write_recall_report<W: Write>(
    mut w: W,
    results: &[QueryResult],
    spec: &RecallSpec,
) -> std::io::Result<()> {
    writeln!(w, "query_id,threshold_idx,within,count,tp")?;
    for r in results {
        for (k, (within, tp)) in r.within.iter().zip(&r.true_positive).enumerate() {
            writeln!(w, "{},{},{},{},{}", r.query_id, k, within, r.count, u8::from(*tp))?;
        }
    }
    for (k, (t, recall)) in spec.thresholds.iter().zip(recall_aggregate(results)).enumerate() {
        writeln!(
            w,
            "# recall threshold_idx={k} translation={} rotation_deg={} gamma={} recall={recall:.2}",
            t.translation, t.rotation_deg, spec.gamma
        )?;
    }
    Ok(())
}
