//! Exact observed-data log-likelihood of the MSLn model, and the classical
//! univariate Heckman likelihood as the R = 1 cross-check.
//!
//! Each record contributes
//! `log Phi_{p^c}(v1, v2 | mu^{co}, Lambda^{cc.o}) + log phi_{p^o}(y^o | mu^o, Lambda^{oo})`,
//! with the density term absent when nothing is observed.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{gather, gather_block, SpdMatrix};
use crate::model::{
    censor_partition, mean_vector, observed_vector, ModelParams, ObservationRecord,
};
use crate::mvn::{mvn_logpdf, mvn_rect_prob};
use crate::normal;
use crate::seed;

/// Sentinel for log-likelihoods of zero-probability cells; large and negative
/// but safely inside the f64 range so sums stay finite.
pub const NEG_SENTINEL: f64 = -1e300;

/// Per-record evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RecordLoglik {
    pub value: f64,
    /// Error estimate of the rectangle probability that entered the value.
    pub rect_error: f64,
    /// Set when the rectangle probability collapsed to zero and the sentinel
    /// was used.
    pub degenerate: bool,
}

/// Observed-data log-likelihood with per-record contributions.
#[derive(Debug, Clone)]
pub struct LoglikBreakdown {
    pub total: f64,
    pub per_record: Vec<f64>,
    /// Accumulated rectangle-probability error estimates.
    pub rect_error_bound: f64,
    /// Indices of records that hit the zero-probability sentinel.
    pub degenerate_records: Vec<usize>,
}

/// Log-likelihood contribution of a single record.
pub fn loglik_record(
    params: &ModelParams,
    record: &ObservationRecord,
    tol: f64,
    seed: u64,
) -> Result<RecordLoglik> {
    let mu = mean_vector(params, record)?;
    let lambda = params.lambda()?;
    let part = censor_partition(record);

    let mut value = 0.0;
    let mut mu_co = gather(&mu, &part.cens_idx);

    let cov_cc_o = if part.n_observed() > 0 {
        let y_o = observed_vector(record, &part);
        let mu_o = gather(&mu, &part.obs_idx);
        let cov_oo = lambda.submatrix(&part.obs_idx)?;
        value += mvn_logpdf(&y_o, &mu_o, &cov_oo)?;

        let cov_co = gather_block(lambda.mat(), &part.cens_idx, &part.obs_idx);
        let resid = &y_o - &mu_o;
        mu_co += &cov_co * cov_oo.chol().solve_vec(&resid);
        let cc = gather_block(lambda.mat(), &part.cens_idx, &part.cens_idx)
            - &cov_co * cov_oo.chol().solve_mat(&cov_co.transpose());
        SpdMatrix::new(cc)?
    } else {
        lambda.submatrix(&part.cens_idx)?
    };

    let rect = mvn_rect_prob(&part.lower, &part.upper, &mu_co, &cov_cc_o, tol, seed)?;
    if rect.probability > 0.0 {
        value += rect.probability.ln();
        Ok(RecordLoglik {
            value,
            rect_error: rect.error_estimate,
            degenerate: false,
        })
    } else {
        Ok(RecordLoglik {
            value: NEG_SENTINEL,
            rect_error: rect.error_estimate,
            degenerate: true,
        })
    }
}

/// Observed-data log-likelihood of the whole sample. Per-record seeds are
/// derived deterministically from `(seed, record index)`, so the result is
/// reproducible and independent of scheduling.
pub fn loglik(
    params: &ModelParams,
    data: &[ObservationRecord],
    tol: f64,
    seed: u64,
) -> Result<LoglikBreakdown> {
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "loglik needs at least one record".into(),
        ));
    }
    let evals: Vec<Result<RecordLoglik>> = data
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            loglik_record(
                params,
                rec,
                tol,
                seed::derive(seed, seed::stream::LOGLIK, i as u64),
            )
        })
        .collect();

    let mut per_record = Vec::with_capacity(data.len());
    let mut rect_error_bound = 0.0;
    let mut degenerate_records = Vec::new();
    for (i, ev) in evals.into_iter().enumerate() {
        let ev = ev.map_err(|e| e.at_record(i))?;
        per_record.push(ev.value);
        rect_error_bound += ev.rect_error;
        if ev.degenerate {
            degenerate_records.push(i);
        }
    }
    let total = per_record.iter().sum();
    Ok(LoglikBreakdown {
        total,
        per_record,
        rect_error_bound,
        degenerate_records,
    })
}

/// Classical Heckman (SLn) log-likelihood for R = 1 data, using only
/// univariate normal pdf/cdf terms:
/// selected: `log phi(V | x'beta, sigma^2) + log Phi(mu_c / sigma_c)` with
/// `mu_c = w'gamma + (rho/sigma)(V - x'beta)`, `sigma_c^2 = 1 - rho^2`;
/// unselected: `log Phi(-w'gamma)`.
pub fn classical_heckman_loglik(
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    sigma: f64,
    rho: f64,
    data: &[ObservationRecord],
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be in (-1, 1), got {rho}"
        )));
    }
    let sigma_c = (1.0 - rho * rho).sqrt();
    let mut total = 0.0;
    for (i, rec) in data.iter().enumerate() {
        if rec.n_outcomes() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "classical likelihood needs R = 1 records, record {i} has R = {}",
                rec.n_outcomes()
            )));
        }
        let xb = rec.x[0].dot(beta);
        let wg = rec.w[0].dot(gamma);
        if rec.c[0] {
            let v = rec.y_obs[0].expect("selected record has an outcome");
            let z = (v - xb) / sigma;
            let mu_c = wg + rho / sigma * (v - xb);
            total += normal::log_pdf(z) - sigma.ln() + normal::log_cdf(mu_c / sigma_c);
        } else {
            total += normal::log_cdf(-wg);
        }
    }
    Ok(total)
}
