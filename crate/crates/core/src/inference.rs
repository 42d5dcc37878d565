//! Nonparametric bootstrap and Monte-Carlo replication studies.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Layout};
use crate::error::{Error, Result};
use crate::rng::substream;

pub const MIN_REPLICATES: usize = 50;
/// Largest share of failed replicates tolerated without `force`.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Return a result flagged unreliable instead of failing when too many
    /// replicates error.
    pub force: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            alpha: 0.05,
            seed: 0,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Estimates on the original data.
    pub estimate: Vec<f64>,
    /// One row per successful replicate, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    pub n_failed: usize,
    pub unreliable: bool,
}

impl BootstrapResult {
    /// Sample covariance (divisor B − 1) of the successful replicates.
    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.estimate.len();
        let b = self.replicates.len();
        if b < 2 {
            return DMatrix::zeros(p, p);
        }
        let m = DMatrix::from_fn(b, p, |r, k| self.replicates[r][k]);
        let means = m.row_mean();
        let centered = DMatrix::from_fn(b, p, |r, k| m[(r, k)] - means[k]);
        centered.tr_mul(&centered) / (b - 1) as f64
    }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Resamples rows (point data) or whole subjects (longitudinal data) with
/// replacement, reruns `statistic` on each resample, and summarizes the
/// spread. Replicate r draws from stream r of `seed`, so the result does not
/// depend on the thread count.
pub fn bootstrap<F>(statistic: F, data: &Dataset, config: &BootstrapConfig) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if config.replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
            config.replicates
        )));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", config.alpha)));
    }
    let estimate = statistic(data)?;
    let p = estimate.len();

    let panel = match data.layout() {
        Layout::Point => None,
        Layout::Longitudinal { .. } => Some(data.panel()?),
    };
    let units = panel.as_ref().map_or(data.n_rows(), |pn| pn.subjects.len());

    let draws: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(config.seed, r as u64);
            let picks: Vec<usize> = (0..units).map(|_| rng.random_range(0..units)).collect();
            let resample = match &panel {
                None => Ok(data.select_rows(&picks)),
                Some(pn) => data.select_subjects(pn, &picks),
            };
            resample
                .and_then(|d| statistic(&d))
                .ok()
                .filter(|v| v.len() == p && v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let replicates: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let n_failed = config.replicates - replicates.len();
    let unreliable = n_failed as f64 > MAX_FAILED_SHARE * config.replicates as f64;
    if unreliable && !config.force {
        return Err(Error::TooManyFailedReplicates {
            failed: n_failed,
            total: config.replicates,
        });
    }
    if replicates.is_empty() {
        return Err(Error::TooManyFailedReplicates {
            failed: n_failed,
            total: config.replicates,
        });
    }

    let mut se = Vec::with_capacity(p);
    let mut ci = Vec::with_capacity(p);
    for k in 0..p {
        let mut col: Vec<f64> = replicates.iter().map(|r| r[k]).collect();
        se.push(sample_sd(&col));
        col.sort_by(f64::total_cmp);
        ci.push((
            quantile(&col, config.alpha / 2.0),
            quantile(&col, 1.0 - config.alpha / 2.0),
        ));
    }
    Ok(BootstrapResult {
        estimate,
        replicates,
        se,
        ci,
        alpha: config.alpha,
        b: config.replicates,
        seed: config.seed,
        n_failed,
        unreliable,
    })
}

/// One estimated quantity from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateValue {
    /// Estimator or quantity label; summaries are grouped by it.
    pub name: String,
    pub estimate: f64,
    pub truth: f64,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub name: String,
    pub truth: f64,
    pub replications: usize,
    pub mean: f64,
    pub bias: f64,
    /// Standard deviation of the estimates across replications.
    pub sd: f64,
    /// sd / √replications.
    pub mc_se: f64,
    pub rmse: f64,
    /// Share of intervals containing the truth, when intervals were reported.
    pub coverage: Option<f64>,
}

impl ReplicationSummary {
    /// |bias| in units of the Monte-Carlo standard error.
    pub fn bias_in_mc_se(&self) -> f64 {
        if self.mc_se > 0.0 {
            self.bias.abs() / self.mc_se
        } else if self.bias == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStudy {
    pub seed: u64,
    pub replications: usize,
    pub summaries: Vec<ReplicationSummary>,
    pub failures: Vec<ReplicationFailure>,
}

/// Summary of `values` for a single quantity. Panics if `values` is empty.
pub fn summarize(name: &str, values: &[ReplicateValue]) -> ReplicationSummary {
    let r = values.len();
    let estimates: Vec<f64> = values.iter().map(|v| v.estimate).collect();
    let truth = values[0].truth;
    let mean = estimates.iter().sum::<f64>() / r as f64;
    let sd = sample_sd(&estimates);
    let mse = values.iter().map(|v| (v.estimate - v.truth).powi(2)).sum::<f64>() / r as f64;
    let with_ci: Vec<(f64, f64, f64)> = values
        .iter()
        .filter_map(|v| v.ci.map(|(lo, hi)| (lo, hi, v.truth)))
        .collect();
    let coverage = (!with_ci.is_empty()).then(|| {
        with_ci.iter().filter(|(lo, hi, t)| lo <= t && t <= hi).count() as f64 / with_ci.len() as f64
    });
    ReplicationSummary {
        name: name.to_string(),
        truth,
        replications: r,
        mean,
        bias: mean - truth,
        sd,
        mc_se: sd / (r as f64).sqrt(),
        rmse: mse.sqrt(),
        coverage,
    }
}

/// Runs `replicate(r, seed_r)` for r in 0..`replications`, where seed_r is the
/// first draw of stream r of `seed`, and summarizes each named quantity.
/// A replication that errors is logged and dropped as a whole.
pub fn run_replication_study<F>(replications: usize, seed: u64, replicate: F) -> Result<ReplicationStudy>
where
    F: Fn(usize, u64) -> Result<Vec<ReplicateValue>> + Sync,
{
    if replications < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "a replication study needs at least {MIN_REPLICATES} replications, got {replications}"
        )));
    }
    let outcomes: Vec<Result<Vec<ReplicateValue>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed: u64 = substream(seed, r as u64).random();
            replicate(r, rep_seed)
        })
        .collect();

    let mut names: Vec<String> = Vec::new();
    let mut grouped: Vec<Vec<ReplicateValue>> = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(values) => {
                for v in values {
                    match names.iter().position(|n| *n == v.name) {
                        Some(k) => grouped[k].push(v),
                        None => {
                            names.push(v.name.clone());
                            grouped.push(vec![v]);
                        }
                    }
                }
            }
            Err(e) => failures.push(ReplicationFailure {
                replication: r,
                message: e.to_string(),
            }),
        }
    }
    let summaries = names
        .iter()
        .zip(&grouped)
        .map(|(n, vals)| summarize(n, vals))
        .collect();
    Ok(ReplicationStudy {
        seed,
        replications,
        summaries,
        failures,
    })
}
