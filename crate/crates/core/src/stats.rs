//! Cluster bootstrap confidence intervals.
//!
//! Replicate `r` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `r`, so an interval depends only on `(sample, n_boot, level, seed)`
//! and not on how replicates are scheduled across threads. Quantiles use the
//! nearest-rank rule on the sorted replicate means.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

pub const DEFAULT_N_BOOT: usize = 2000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapParams {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            n_boot: DEFAULT_N_BOOT,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

impl BootstrapParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot == 0 {
            return Err(AuditError::invalid("n_boot must be at least 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(AuditError::invalid(format!("level {} is outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredSample {
    pub clusters: Vec<(String, f64)>,
}

impl ClusteredSample {
    pub fn new(clusters: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, v) in &clusters {
            if !v.is_finite() {
                return Err(AuditError::invalid(format!("cluster {id} has non-finite value {v}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(AuditError::invalid(format!("duplicate cluster id {id}")));
            }
        }
        Ok(ClusteredSample { clusters })
    }

    pub fn mean(&self) -> f64 {
        mean(self.clusters.iter().map(|(_, v)| *v))
    }

    fn values(&self) -> Vec<f64> {
        self.clusters.iter().map(|(_, v)| *v).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl ConfidenceInterval {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedInterval {
    pub mean_diff: f64,
    pub ci: ConfidenceInterval,
    pub excludes_zero: bool,
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Sorted means of `n_boot` cluster resamples.
pub fn bootstrap_means(values: &[f64], n_boot: usize, seed: u64) -> Vec<f64> {
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[rng.gen_range(0..n)];
            }
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

/// Nearest-rank quantile of sorted data: the value at rank `ceil(p * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // The epsilon keeps p * n from rounding just past an integer rank.
    let rank = ((p * n as f64) - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn percentile_interval(values: &[f64], params: &BootstrapParams) -> ConfidenceInterval {
    let tail = (1.0 - params.level) / 2.0;
    // Every resample of a constant sample has the constant as its mean;
    // summing would only add rounding error.
    let (lo, hi) = if values.iter().all(|v| *v == values[0]) {
        (values[0], values[0])
    } else {
        let means = bootstrap_means(values, params.n_boot, params.seed);
        (nearest_rank(&means, tail), nearest_rank(&means, 1.0 - tail))
    };
    ConfidenceInterval {
        lo,
        hi,
        level: params.level,
        n_boot: params.n_boot,
        seed: params.seed,
    }
}

pub fn cluster_bootstrap_ci(sample: &ClusteredSample, params: &BootstrapParams) -> Result<ConfidenceInterval> {
    params.validate()?;
    if sample.clusters.len() < 2 {
        return Err(AuditError::invalid(format!(
            "bootstrap needs at least 2 clusters, got {}",
            sample.clusters.len()
        )));
    }
    Ok(percentile_interval(&sample.values(), params))
}

/// Bootstrap interval of the mean per-cluster difference `a - b`.
pub fn paired_difference_ci(paired: &[(String, f64, f64)], params: &BootstrapParams) -> Result<PairedInterval> {
    let diffs: Vec<(String, f64)> = paired.iter().map(|(id, a, b)| (id.clone(), a - b)).collect();
    let sample = ClusteredSample::new(diffs)?;
    let ci = cluster_bootstrap_ci(&sample, params)?;
    Ok(PairedInterval {
        mean_diff: sample.mean(),
        ci,
        excludes_zero: ci.excludes_zero(),
    })
}

/// Pairs two per-cluster samples by id. Every id must appear in both.
pub fn pair_by_cluster(a: &ClusteredSample, b: &ClusteredSample) -> Result<Vec<(String, f64, f64)>> {
    let lookup: std::collections::HashMap<&str, f64> = b.clusters.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    if a.clusters.len() != b.clusters.len() {
        return Err(AuditError::invalid(format!(
            "cannot pair {} clusters with {}",
            a.clusters.len(),
            b.clusters.len()
        )));
    }
    a.clusters
        .iter()
        .map(|(id, va)| {
            lookup
                .get(id.as_str())
                .map(|vb| (id.clone(), *va, *vb))
                .ok_or_else(|| AuditError::invalid(format!("cluster {id} has no partner")))
        })
        .collect()
}
