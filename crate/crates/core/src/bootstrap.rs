//! Nonparametric bootstrap standard errors and percentile confidence
//! intervals for fitted models.
//!
//! Replications resample records with replacement (n out of n) and refit,
//! warm-starting from the full-data point estimate. Standard errors are the
//! textbook standard deviations (denominator B-1) of the replicate estimates;
//! intervals are empirical quantiles with linear interpolation between order
//! statistics. Failed refits are excluded and counted; more than 20% failures
//! aborts the report.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ecm::{fit, FitConfig};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ObservationRecord, OutcomeDesign};
use crate::seed;

/// Bootstrap output: point estimates with per-parameter spread.
#[derive(Debug, Clone)]
pub struct BootstrapReport {
    pub point: ModelParams,
    /// Stable parameter names matching the flattened layout.
    pub names: Vec<String>,
    pub point_values: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub replications_used: usize,
    pub failures: usize,
    /// Flattened parameter vector of each successful replication, in
    /// replication order (for the CLI's replicate dump).
    pub replicates: Vec<(usize, Vec<f64>)>,
}

/// Empirical (alpha/2, 1 - alpha/2) quantiles with linear interpolation
/// between order statistics.
pub fn percentile_ci(samples: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!samples.is_empty(), "percentile_ci needs samples");
    assert!(0.0 < alpha && alpha < 1.0, "alpha must be in (0,1)");
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_type7(&v, alpha / 2.0),
        quantile_type7(&v, 1.0 - alpha / 2.0),
    )
}

fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Nonparametric bootstrap with `b` replications. Deterministic per seed.
pub fn bootstrap(
    data: &[ObservationRecord],
    design: &OutcomeDesign,
    config: &FitConfig,
    b: usize,
    seed_value: u64,
) -> Result<BootstrapReport> {
    if b < 2 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least 2 replications, got {b}"
        )));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("bootstrap needs records".into()));
    }

    let full = fit(data, design, config)?;
    let point = full.params.clone();
    let (names, point_values) = point.flatten();
    let n = data.len();

    let replicate_results: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seed::derive(seed_value, seed::stream::BOOTSTRAP, rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
            let resample: Vec<ObservationRecord> = (0..n)
                .map(|_| data[rng.random_range(0..n)].clone())
                .collect();
            let mut cfg = config.clone();
            cfg.seed = rep_seed;
            cfg.init = Some(point.clone());
            fit(&resample, design, &cfg)
                .ok()
                .map(|r| r.params.flatten().1)
        })
        .collect();

    let mut replicates = Vec::with_capacity(b);
    let mut failures = 0usize;
    for (rep, r) in replicate_results.into_iter().enumerate() {
        match r {
            Some(v) => replicates.push((rep, v)),
            None => failures += 1,
        }
    }
    if failures * 5 > b {
        return Err(Error::BootstrapUnstable {
            failures,
            requested: b,
        });
    }

    let used = replicates.len();
    let k = point_values.len();
    let mut se = vec![0.0f64; k];
    let mut ci_lower = vec![0.0f64; k];
    let mut ci_upper = vec![0.0f64; k];
    for j in 0..k {
        let col: Vec<f64> = replicates.iter().map(|(_, v)| v[j]).collect();
        let mean = col.iter().sum::<f64>() / used as f64;
        se[j] =
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (used as f64 - 1.0)).sqrt();
        let (lo, hi) = percentile_ci(&col, 0.05);
        ci_lower[j] = lo;
        ci_upper[j] = hi;
    }

    Ok(BootstrapReport {
        point,
        names,
        point_values,
        se,
        ci_lower,
        ci_upper,
        replications_used: used,
        failures,
        replicates,
    })
}
