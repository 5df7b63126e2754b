//! Unified skew-normal layer: the SUN parameter mapping for the conditional
//! law of observed outcomes given selection, the matrix-variate inverse-Mills
//! mean correction, and a rejection-sampling oracle for checking both.
//!
//! The componentwise correction formula whitens the selection block by the
//! symmetric square root of Psi_obs; for non-diagonal Psi_obs the whitened
//! region is no longer an orthant, so the formula is exact only in the
//! diagonal case. Tests assert agreement with the oracle there and merely
//! report the discrepancy for correlated cases.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::model::{mean_matrix, ModelParams, ObservationRecord};
use crate::normal;

/// SUN parameters of `y1_obs | (C, Z)` per the selection representation:
/// xi = mu1_obs, omega = rho*sigma*Psi_obs, delta = Psi_obs^{1/2},
/// tau = mu2_obs, gamma = Psi_obs.
#[derive(Debug, Clone)]
pub struct SunParams {
    pub xi: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub gamma: SpdMatrix,
}

impl SunParams {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

/// The truncated-normal mean correction and the corrected conditional mean.
#[derive(Debug, Clone)]
pub struct SelectionCorrection {
    /// delta_obs = Psi_obs^{1/2} lambda(Psi_obs^{-1/2} mu2_obs), componentwise lambda.
    pub delta_obs: DVector<f64>,
    /// mu1_obs + rho*sigma*delta_obs.
    pub corrected_mean: DVector<f64>,
}

/// Symmetric PSD square root via eigendecomposition.
pub fn sqrt_psd(m: &SpdMatrix) -> DMatrix<f64> {
    let eig = m.mat().clone().symmetric_eigen();
    let mut d = DMatrix::zeros(m.dim(), m.dim());
    for i in 0..m.dim() {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Inverse of the symmetric square root.
fn inv_sqrt_psd(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    let eig = m.mat().clone().symmetric_eigen();
    let mut d = DMatrix::zeros(m.dim(), m.dim());
    for i in 0..m.dim() {
        let ev = eig.eigenvalues[i];
        if ev <= 0.0 {
            return Err(Error::NotPositiveDefinite("Psi_obs in SUN mapping".into()));
        }
        d[(i, i)] = 1.0 / ev.sqrt();
    }
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn observed_set(record: &ObservationRecord) -> Vec<usize> {
    (0..record.n_outcomes()).filter(|&r| record.c[r]).collect()
}

fn observed_means(
    params: &ModelParams,
    record: &ObservationRecord,
    obs: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = mean_matrix(params, record)?;
    let mu1 = DVector::from_iterator(obs.len(), obs.iter().map(|&r| m[(0, r)]));
    let mu2 = DVector::from_iterator(obs.len(), obs.iter().map(|&r| m[(1, r)]));
    Ok((mu1, mu2))
}

/// SUN parameter mapping for a record; requires at least one observed outcome.
pub fn sun_params(params: &ModelParams, record: &ObservationRecord) -> Result<SunParams> {
    let obs = observed_set(record);
    if obs.is_empty() {
        return Err(Error::InsufficientData(
            "SUN representation needs at least one observed outcome".into(),
        ));
    }
    let (mu1, mu2) = observed_means(params, record, &obs)?;
    let psi_obs = params.psi.submatrix(&obs)?;
    let delta = sqrt_psd(&psi_obs);
    Ok(SunParams {
        xi: mu1,
        omega: psi_obs.mat() * (params.rho * params.sigma),
        delta,
        tau: mu2,
        gamma: psi_obs,
    })
}

/// Matrix-variate inverse-Mills correction of the observed outcome means.
pub fn mills_correction(
    params: &ModelParams,
    record: &ObservationRecord,
) -> Result<SelectionCorrection> {
    let obs = observed_set(record);
    if obs.is_empty() {
        return Err(Error::InsufficientData(
            "Mills correction needs at least one observed outcome".into(),
        ));
    }
    let (mu1, mu2) = observed_means(params, record, &obs)?;
    let psi_obs = params.psi.submatrix(&obs)?;
    let root = sqrt_psd(&psi_obs);
    let u = inv_sqrt_psd(&psi_obs)? * &mu2;
    let lam = DVector::from_iterator(obs.len(), u.iter().map(|&v| normal::inv_mills(v)));
    let delta_obs = &root * lam;
    let corrected_mean = &mu1 + &delta_obs * (params.rho * params.sigma);
    Ok(SelectionCorrection {
        delta_obs,
        corrected_mean,
    })
}

/// Rejection-sampling estimate of E[y1_obs | C, Z].
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    /// Monte Carlo standard error per component.
    pub se: DVector<f64>,
    pub accepted: usize,
    pub attempts: usize,
}

/// Estimate E[y1_obs | C_i, Z_i] under the generative model by rejection on
/// the full selection pattern. `draws` is the number of accepted samples.
pub fn conditional_mean_mc_oracle(
    params: &ModelParams,
    record: &ObservationRecord,
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if draws < 100_000 {
        return Err(Error::InvalidParameter(format!(
            "oracle needs at least 1e5 draws, got {draws}"
        )));
    }
    let obs = observed_set(record);
    if obs.is_empty() {
        return Err(Error::InsufficientData(
            "oracle needs at least one observed outcome".into(),
        ));
    }
    let rr = params.n_outcomes();
    let m = mean_matrix(params, record)?;
    let sig_chol = params.sigma_matrix().chol().lower().clone();
    let psi_chol = params.psi.chol().lower().clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = rand_distr::StandardNormal;
    let k = obs.len();
    let mut sum: DVector<f64> = DVector::zeros(k);
    let mut sumsq: DVector<f64> = DVector::zeros(k);
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let max_attempts = draws.saturating_mul(10_000);

    while accepted < draws {
        if attempts >= max_attempts {
            return Err(Error::OracleInfeasible {
                rate: accepted as f64 / attempts as f64,
            });
        }
        attempts += 1;
        // E = L_sigma Z L_psi', Y = M + E.
        let z = DMatrix::from_fn(2, rr, |_, _| rng.sample::<f64, _>(std_normal));
        let e = &sig_chol * z * psi_chol.transpose();
        let mut ok = true;
        for r in 0..rr {
            let sel = m[(1, r)] + e[(1, r)];
            if (sel > 0.0) != record.c[r] {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        accepted += 1;
        for (j, &r) in obs.iter().enumerate() {
            let y1 = m[(0, r)] + e[(0, r)];
            sum[j] += y1;
            sumsq[j] += y1 * y1;
        }
    }

    let n = draws as f64;
    let mean = &sum / n;
    let se = DVector::from_fn(k, |j, _| {
        let var: f64 = (sumsq[j] - sum[j] * sum[j] / n) / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(McEstimate {
        mean,
        se,
        accepted,
        attempts,
    })
}
