//! ECM estimator for the MSLn model.
//!
//! Each iteration runs the E-step (truncated-normal moments of the censored
//! block, record by record), a GLS update of all regression coefficients, and
//! the covariance updates obtained from the Cholesky-column representation of
//! the per-record cross-product matrices, followed by the identifiability
//! reset of Sigma's second diagonal. Rectangle-integral seeds are derived per
//! record and never depend on the iteration, so the objective surface is
//! deterministic and the stopping rule is meaningful.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::loglik;
use crate::linalg::{cholesky_with_jitter, kron, unvec, SpdMatrix};
use crate::model::{
    censor_partition, design_block, mean_vector, observed_vector, sigma_matrix, CensorPartition,
    ModelParams, ObservationRecord, OutcomeDesign,
};
use crate::normal;
use crate::seed;
use crate::truncmoments::conditional_censored_moments;

/// How the Sigma_22 = 1 constraint is re-imposed after the covariance update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintReset {
    /// Rescale Sigma by 1/Sigma_22 and multiply Psi by Sigma_22; preserves
    /// Psi (x) Sigma exactly, so the likelihood is invariant under the reset.
    #[default]
    Rescale,
    /// Overwrite the (2,2) entry with 1, leaving the rest untouched (the
    /// literal update; can break positive definiteness).
    Overwrite,
}

/// Estimation settings.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Relative log-likelihood stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Accuracy target for rectangle probabilities.
    pub rect_tol: f64,
    pub seed: u64,
    /// Allowed per-iteration decrease of the log-likelihood before the
    /// iteration is retried at finer tolerance.
    pub monotonicity_slack: f64,
    pub constraint_reset: ConstraintReset,
    /// Record per-iteration Q-form and eigenvalue diagnostics (costs an
    /// eigendecomposition per record per iteration).
    pub capture_diagnostics: bool,
    /// Warm start; when absent, [`initialize`] provides the starting point.
    pub init: Option<ModelParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            max_iter: 500,
            rect_tol: 1e-6,
            seed: 0,
            monotonicity_slack: 1e-6,
            constraint_reset: ConstraintReset::default(),
            capture_diagnostics: false,
            init: None,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        FitConfig {
            seed,
            ..FitConfig::default()
        }
    }
}

/// Conditional moments of one record's latent response vector.
#[derive(Debug, Clone)]
pub struct EStepResult {
    /// E[vec(Y_i) | data, theta]; observed entries are the data verbatim.
    pub yhat: DVector<f64>,
    /// Conditional covariance; zero on observed rows/columns.
    pub vhat: DMatrix<f64>,
    pub low_mass: bool,
}

/// Per-iteration diagnostics captured on request.
#[derive(Debug, Clone, Copy)]
pub struct IterationDiagnostics {
    /// Q evaluated through the Cholesky-column form.
    pub q_column_form: f64,
    /// Q evaluated through the Kronecker form.
    pub q_kron_form: f64,
    /// Smallest eigenvalue across all per-record cross-product matrices.
    pub min_delta_eigenvalue: f64,
}

/// Fit output.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Observed-data log-likelihood after each iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// E-step for one record: censored-block moments embedded into the full 2R
/// layout, observed entries copied verbatim.
pub fn e_step(
    params: &ModelParams,
    record: &ObservationRecord,
    rect_tol: f64,
    seed: u64,
) -> Result<EStepResult> {
    let lambda = params.lambda()?;
    let mu = mean_vector(params, record)?;
    let part = censor_partition(record);
    let y_obs = observed_vector(record, &part);
    e_step_with(&lambda, &mu, &part, &y_obs, rect_tol, seed)
}

fn e_step_with(
    lambda: &SpdMatrix,
    mu: &DVector<f64>,
    part: &CensorPartition,
    y_obs: &DVector<f64>,
    rect_tol: f64,
    seed: u64,
) -> Result<EStepResult> {
    let d = lambda.dim();
    let tm = conditional_censored_moments(mu, lambda, part, y_obs, rect_tol, seed)?;
    let mut yhat = DVector::zeros(d);
    let mut vhat = DMatrix::zeros(d, d);
    for (k, &i) in part.obs_idx.iter().enumerate() {
        yhat[i] = y_obs[k];
    }
    for (a, &i) in part.cens_idx.iter().enumerate() {
        yhat[i] = tm.mean[a];
        for (b, &j) in part.cens_idx.iter().enumerate() {
            vhat[(i, j)] = tm.cov[(a, b)];
        }
    }
    Ok(EStepResult {
        yhat,
        vhat,
        low_mass: tm.low_mass,
    })
}

/// Cross-product matrix (yhat - vec(Z_i B))(yhat - vec(Z_i B))' + Vhat.
pub fn delta_hat(
    params: &ModelParams,
    estep: &EStepResult,
    record: &ObservationRecord,
) -> Result<DMatrix<f64>> {
    let mu = mean_vector(params, record)?;
    let r = &estep.yhat - mu;
    Ok(&r * r.transpose() + &estep.vhat)
}

/// Factor columns of a cross-product matrix reshaped into 2 x R blocks:
/// vec(D_j) is the j-th column of a factor F with F F' = Delta*.
///
/// Strictly positive definite inputs use the Cholesky factor. Partially
/// observed records make Delta* genuinely singular (the conditional variance
/// vanishes along observed directions), so the PSD case falls back to the
/// symmetric eigendecomposition, which reconstructs Delta* exactly instead of
/// perturbing it; every downstream quantity depends on the factorization only
/// through sums of vec(D_j) vec(D_j)'.
pub fn factor_columns(delta_star: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let d = delta_star.nrows();
    debug_assert_eq!(d % 2, 0);
    let r = d / 2;
    if let Some(chol) = nalgebra::Cholesky::new(delta_star.clone()) {
        let l = chol.l();
        return Ok((0..d)
            .map(|j| unvec(&l.column(j).into_owned(), 2, r))
            .collect());
    }
    if delta_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("factor_columns".into()));
    }
    let sym = (delta_star + delta_star.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    Ok((0..d)
        .map(|j| {
            let v = eig.eigenvectors.column(j).into_owned() * eig.eigenvalues[j].max(0.0).sqrt();
            unvec(&v, 2, r)
        })
        .collect())
}

/// Q-function in the Cholesky-column form:
/// -nR log 2pi - n log|Psi| - (nR/2) log|Sigma| - 1/2 sum tr(Sigma^-1 D Psi^-1 D').
pub fn q_column_form(columns: &[Vec<DMatrix<f64>>], sigma: &SpdMatrix, psi: &SpdMatrix) -> f64 {
    let n = columns.len() as f64;
    let r = psi.dim() as f64;
    let sigma_inv = sigma.inverse();
    let psi_inv = psi.inverse();
    let mut quad = 0.0;
    for cols in columns {
        for d in cols {
            quad += (&sigma_inv * d * &psi_inv * d.transpose()).trace();
        }
    }
    -n * r * (2.0 * std::f64::consts::PI).ln()
        - n * psi.log_det()
        - n * r / 2.0 * sigma.log_det()
        - 0.5 * quad
}

/// Q-function in the direct Kronecker form:
/// -nR log 2pi - n log|Psi| - (nR/2) log|Sigma| - 1/2 sum tr((Psi (x) Sigma)^-1 Delta*).
pub fn q_kron_form(deltas: &[DMatrix<f64>], sigma: &SpdMatrix, psi: &SpdMatrix) -> Result<f64> {
    let n = deltas.len() as f64;
    let r = psi.dim() as f64;
    let lam = SpdMatrix::new(kron(psi.mat(), sigma.mat()))?;
    let mut quad = 0.0;
    for d in deltas {
        quad += lam.chol().solve_mat(d).trace();
    }
    Ok(-n * r * (2.0 * std::f64::consts::PI).ln()
        - n * psi.log_det()
        - n * r / 2.0 * sigma.log_det()
        - 0.5 * quad)
}

/// Stacked per-record design: rows (2r, 2r+1) hold outcome r's design block at
/// its coefficient offset, so `W_i b = vec(Z_i B)`.
fn stacked_design(record: &ObservationRecord, design: &OutcomeDesign) -> DMatrix<f64> {
    let rr = design.n_outcomes();
    let mut w = DMatrix::zeros(2 * rr, design.coef_len());
    for r in 0..rr {
        let off = design.block_offset(r);
        for j in 0..design.p(r) {
            w[(2 * r, off + j)] = record.x[r][j];
        }
        for j in 0..design.q(r) {
            w[(2 * r + 1, off + design.p(r) + j)] = record.w[r][j];
        }
    }
    w
}

/// Regression update: joint GLS of the stacked coefficients over the
/// block-diagonal pattern with weight (Psi (x) Sigma)^-1. This is the exact
/// maximizer of the Q-function over B for fixed covariances; it reduces to the
/// per-outcome closed forms when Psi is diagonal.
pub fn cm_step_regression(
    design: &OutcomeDesign,
    records: &[ObservationRecord],
    estep: &[EStepResult],
    sigma: &SpdMatrix,
    psi: &SpdMatrix,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let m = design.coef_len();
    let lam = SpdMatrix::new(kron(psi.mat(), sigma.mat()))?;
    let mut a = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (rec, es) in records.iter().zip(estep) {
        let w = stacked_design(rec, design);
        let liw = lam.chol().solve_mat(&w);
        a += w.transpose() * &liw;
        rhs += liw.transpose() * &es.yhat;
    }
    let b = match cholesky_with_jitter(&a, "cm_step_regression") {
        Ok(f) => f.solve_vec(&rhs),
        Err(_) => {
            // Identify the offending outcome for the error message.
            for r in 0..design.n_outcomes() {
                if per_outcome_normal_matrix(design, records, sigma, r)
                    .and_then(|m| cholesky_with_jitter(&m, "per-outcome"))
                    .is_err()
                {
                    return Err(Error::RankDeficient { outcome: r });
                }
            }
            return Err(Error::SingularSystem(
                "stacked regression normal equations are singular".into(),
            ));
        }
    };
    Ok(unpack_coefficients(design, &b))
}

fn per_outcome_normal_matrix(
    design: &OutcomeDesign,
    records: &[ObservationRecord],
    sigma: &SpdMatrix,
    r: usize,
) -> Result<DMatrix<f64>> {
    let k = design.p(r) + design.q(r);
    let mut a = DMatrix::zeros(k, k);
    for rec in records {
        let z = design_block(rec, r);
        let siz = sigma.chol().solve_mat(&z);
        a += z.transpose() * siz;
    }
    Ok(a)
}

fn unpack_coefficients(
    design: &OutcomeDesign,
    b: &DVector<f64>,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut beta = Vec::with_capacity(design.n_outcomes());
    let mut gamma = Vec::with_capacity(design.n_outcomes());
    for r in 0..design.n_outcomes() {
        let off = design.block_offset(r);
        beta.push(b.rows(off, design.p(r)).into_owned());
        gamma.push(b.rows(off + design.p(r), design.q(r)).into_owned());
    }
    (beta, gamma)
}

/// Per-outcome regression update: solves the 2-row GLS system of each outcome
/// separately with weight Sigma^-1 (exact when Psi is diagonal).
pub fn cm_step_regression_per_outcome(
    design: &OutcomeDesign,
    records: &[ObservationRecord],
    estep: &[EStepResult],
    sigma: &SpdMatrix,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mut beta = Vec::with_capacity(design.n_outcomes());
    let mut gamma = Vec::with_capacity(design.n_outcomes());
    for r in 0..design.n_outcomes() {
        let k = design.p(r) + design.q(r);
        let mut a = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (rec, es) in records.iter().zip(estep) {
            let z = design_block(rec, r);
            let siz = sigma.chol().solve_mat(&z);
            a += z.transpose() * &siz;
            let y = DVector::from_column_slice(&[es.yhat[2 * r], es.yhat[2 * r + 1]]);
            rhs += siz.transpose() * y;
        }
        let coef = cholesky_with_jitter(&a, "cm_step_regression_per_outcome")
            .map_err(|_| Error::RankDeficient { outcome: r })?
            .solve_vec(&rhs);
        beta.push(coef.rows(0, design.p(r)).into_owned());
        gamma.push(coef.rows(design.p(r), design.q(r)).into_owned());
    }
    Ok((beta, gamma))
}

/// Covariance update from the Cholesky columns: Sigma from the current Psi,
/// then Psi from the fresh Sigma, then the identifiability reset.
///
/// For R = 1 Psi is pinned to `[1]` and Sigma gets the exact constrained-MLE
/// update (maximizing over Sigma with Sigma_22 = 1 in closed form).
pub fn cm_step_covariance(
    columns: &[Vec<DMatrix<f64>>],
    psi_prev: &SpdMatrix,
    reset: ConstraintReset,
) -> Result<(f64, f64, SpdMatrix)> {
    let n = columns.len();
    if n == 0 {
        return Err(Error::InsufficientData(
            "covariance update needs records".into(),
        ));
    }
    let rr = psi_prev.dim();
    let psi_inv = psi_prev.inverse();
    let mut s_raw = DMatrix::zeros(2, 2);
    for cols in columns {
        for d in cols {
            s_raw += d * &psi_inv * d.transpose();
        }
    }
    s_raw /= (n * rr) as f64;

    if rr == 1 {
        // Constrained maximizer over {Sigma : Sigma_22 = 1}: the stationarity
        // condition S - Sigma = lambda * (sigma_2 sigma_2') gives
        // Sigma_12 = S_12 / S_22 and Sigma_11 = S_11 - (S_22 - 1) S_12^2 / S_22^2.
        let (s11, s12, s22) = (s_raw[(0, 0)], s_raw[(0, 1)], s_raw[(1, 1)]);
        if !(s22 > 0.0) {
            return Err(Error::NotPositiveDefinite("covariance update (R=1)".into()));
        }
        let b = s12 / s22;
        let a = s11 - (s22 - 1.0) * s12 * s12 / (s22 * s22);
        if !(a > b * b) {
            return Err(Error::NotPositiveDefinite("covariance update (R=1)".into()));
        }
        let sigma = a.sqrt();
        let rho = (b / sigma).clamp(-1.0 + 1e-8, 1.0 - 1e-8);
        return Ok((sigma, rho, SpdMatrix::identity(1)));
    }

    let sigma_c = match reset {
        ConstraintReset::Rescale => {
            let s22 = s_raw[(1, 1)];
            if !(s22 > 0.0) {
                return Err(Error::NotPositiveDefinite("covariance update".into()));
            }
            &s_raw / s22
        }
        ConstraintReset::Overwrite => {
            let mut s = s_raw.clone();
            s[(1, 1)] = 1.0;
            s
        }
    };
    let sigma = sigma_c[(0, 0)].sqrt();
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::NotPositiveDefinite("covariance update".into()));
    }
    let rho = (sigma_c[(0, 1)] / sigma).clamp(-1.0 + 1e-8, 1.0 - 1e-8);
    let sigma_mat = sigma_matrix(sigma, rho)?;

    let sigma_inv = sigma_mat.inverse();
    let mut psi_new = DMatrix::zeros(rr, rr);
    for cols in columns {
        for d in cols {
            psi_new += d.transpose() * &sigma_inv * d;
        }
    }
    psi_new /= (2 * n) as f64;
    let psi =
        SpdMatrix::new(psi_new).map_err(|_| Error::NotPositiveDefinite("Psi update".into()))?;
    Ok((sigma, rho, psi))
}

/// Starting values: mean-imputed moment estimates for the covariances and
/// per-outcome two-step Heckman fits for the regression coefficients.
pub fn initialize(
    data: &[ObservationRecord],
    design: &OutcomeDesign,
    _seed: u64,
) -> Result<(ModelParams, Vec<String>)> {
    let rr = design.n_outcomes();
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData("initialize needs records".into()));
    }
    for rec in data {
        rec.matches(design)?;
    }
    let mut warnings = Vec::new();

    // (i) Complete the data: observed mean replaces missing outcomes, the
    // latent selections become +/-1 by indicator.
    let mut outcome_means: Vec<f64> = Vec::new();
    for r in 0..rr {
        let vals: Vec<f64> = data.iter().filter_map(|rec| rec.y_obs[r]).collect();
        if vals.len() < design.p(r) + 1 {
            return Err(Error::InsufficientData(format!(
                "outcome {r} observed only {} times; need at least p_r + 1 = {}",
                vals.len(),
                design.p(r) + 1
            )));
        }
        outcome_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let completed: Vec<DMatrix<f64>> = data
        .iter()
        .map(|rec| {
            DMatrix::from_fn(2, rr, |row, r| {
                if row == 0 {
                    rec.y_obs[r].unwrap_or(outcome_means[r])
                } else if rec.c[r] {
                    1.0
                } else {
                    -1.0
                }
            })
        })
        .collect();

    // (ii) Moment starts for Sigma and Psi from the completed matrices.
    let ybar = completed
        .iter()
        .fold(DMatrix::zeros(2, rr), |acc, y| acc + y)
        / n as f64;
    let devs: Vec<DMatrix<f64>> = completed.iter().map(|y| y - &ybar).collect();
    let (sigma0, rho0, psi0) = if rr == 1 {
        let mut s = DMatrix::zeros(2, 2);
        for d in &devs {
            s += d * d.transpose();
        }
        s /= n as f64;
        if s[(1, 1)] <= 1e-10 {
            // Constant selection indicators: no usable moment information.
            ((s[(0, 0)].max(0.0025)).sqrt(), 0.0, SpdMatrix::identity(1))
        } else {
            let sigma0 = (s[(0, 0)] / s[(1, 1)]).sqrt().max(0.05);
            let rho0 = (s[(0, 1)] / (s[(0, 0)] * s[(1, 1)]).sqrt()).clamp(-0.9, 0.9);
            (sigma0, rho0, SpdMatrix::identity(1))
        }
    } else {
        let mut sigma_f = DMatrix::identity(2, 2);
        let mut psi_f = DMatrix::identity(rr, rr);
        for _ in 0..20 {
            let psi_spd = SpdMatrix::new(psi_f.clone())?;
            let psi_inv = psi_spd.inverse();
            let mut s = DMatrix::zeros(2, 2);
            for d in &devs {
                s += d * &psi_inv * d.transpose();
            }
            sigma_f = s / (n * rr) as f64;
            let sig_spd = SpdMatrix::new(sigma_f.clone())?;
            let sig_inv = sig_spd.inverse();
            let mut p = DMatrix::zeros(rr, rr);
            for d in &devs {
                p += d.transpose() * &sig_inv * d;
            }
            psi_f = p / (2 * n) as f64;
        }
        let s22 = sigma_f[(1, 1)];
        if s22 <= 1e-10 {
            let sigma0 = sigma_f[(0, 0)].max(0.0025).sqrt();
            (sigma0, 0.0, SpdMatrix::new(psi_f)?)
        } else {
            let sigma_n = &sigma_f / s22;
            let sigma0 = sigma_n[(0, 0)].sqrt().max(0.05);
            let rho0 = (sigma_n[(0, 1)] / sigma0).clamp(-0.9, 0.9);
            let psi0 = SpdMatrix::new(psi_f * s22)?;
            (sigma0, rho0, psi0)
        }
    };

    // (iii) Two-step Heckman per outcome for the regression starts.
    let mut beta0 = Vec::with_capacity(rr);
    let mut gamma0 = Vec::with_capacity(rr);
    for r in 0..rr {
        let gamma = probit_irls(data, r, &mut warnings)?;
        let beta = mills_ols(data, r, &gamma, design, &mut warnings)?;
        beta0.push(beta);
        gamma0.push(gamma);
    }

    let params = ModelParams::new(beta0, gamma0, sigma0, rho0, psi0)?;
    Ok((params, warnings))
}

/// Probit fit of the selection indicator on w_r by Fisher scoring.
fn probit_irls(
    data: &[ObservationRecord],
    r: usize,
    warnings: &mut Vec<String>,
) -> Result<DVector<f64>> {
    let q = data[0].w[r].len();
    let n_sel = data.iter().filter(|rec| rec.c[r]).count();
    if n_sel == 0 || n_sel == data.len() {
        // Separated: fall back to a large intercept of the right sign.
        let mut g = DVector::zeros(q);
        g[0] = if n_sel == 0 { -3.0 } else { 3.0 };
        warnings.push(format!(
            "outcome {}: all selection indicators equal; probit start degenerate",
            r + 1
        ));
        return Ok(g);
    }
    let mut gamma = DVector::zeros(q);
    for _ in 0..50 {
        let mut info = DMatrix::zeros(q, q);
        let mut score = DVector::zeros(q);
        for rec in data {
            let w = &rec.w[r];
            let eta = w.dot(&gamma).clamp(-8.0, 8.0);
            let p = normal::cdf(eta).clamp(1e-10, 1.0 - 1e-10);
            let dens = normal::pdf(eta);
            let y = if rec.c[r] { 1.0 } else { 0.0 };
            let wgt = dens * dens / (p * (1.0 - p));
            score += w * (dens * (y - p) / (p * (1.0 - p)));
            info += w * w.transpose() * wgt;
        }
        let step = cholesky_with_jitter(&info, "probit information")
            .map_err(|_| Error::RankDeficient { outcome: r })?
            .solve_vec(&score);
        gamma += &step;
        if step.amax() < 1e-8 {
            break;
        }
        if gamma.amax() > 50.0 {
            warnings.push(format!(
                "outcome {}: probit start diverged; coefficients clipped",
                r + 1
            ));
            gamma = gamma.map(|v| v.clamp(-10.0, 10.0));
            break;
        }
    }
    Ok(gamma)
}

/// Mills-ratio-augmented OLS of the observed outcomes on x_r; returns the
/// coefficients on x_r only.
fn mills_ols(
    data: &[ObservationRecord],
    r: usize,
    gamma: &DVector<f64>,
    design: &OutcomeDesign,
    warnings: &mut Vec<String>,
) -> Result<DVector<f64>> {
    let p = design.p(r);
    let selected: Vec<&ObservationRecord> = data.iter().filter(|rec| rec.c[r]).collect();
    let mills: Vec<f64> = selected
        .iter()
        .map(|rec| normal::inv_mills(rec.w[r].dot(gamma)))
        .collect();
    let mills_mean = mills.iter().sum::<f64>() / mills.len().max(1) as f64;
    let mills_var = mills
        .iter()
        .map(|m| (m - mills_mean) * (m - mills_mean))
        .sum::<f64>()
        / mills.len().max(1) as f64;
    // A flat Mills column is collinear with the intercept and carries no
    // selection signal.
    let with_mills = selected.len() >= p + 2 && mills_var > 1e-8;
    let k = if with_mills { p + 1 } else { p };
    if selected.len() < p + 2 {
        warnings.push(format!(
            "outcome {}: too few observed values for the Mills term; plain least squares start",
            r + 1
        ));
    }
    let mut a = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (rec, m) in selected.iter().zip(&mills) {
        let mut row = DVector::zeros(k);
        row.rows_mut(0, p).copy_from(&rec.x[r]);
        if with_mills {
            row[p] = *m;
        }
        let y = rec.y_obs[r].expect("selected record has outcome");
        a += &row * row.transpose();
        rhs += row * y;
    }
    let coef = match cholesky_with_jitter(&a, "mills ols") {
        Ok(f) => f.solve_vec(&rhs),
        Err(_) if with_mills => {
            // Mills column collinear with the intercept; drop it.
            let mut a2 = DMatrix::zeros(p, p);
            let mut r2 = DVector::zeros(p);
            for rec in &selected {
                let x = &rec.x[r];
                a2 += x * x.transpose();
                r2 += x * rec.y_obs[r].unwrap();
            }
            let f = cholesky_with_jitter(&a2, "ols")
                .map_err(|_| Error::RankDeficient { outcome: r })?;
            let mut c = DVector::zeros(p + 1);
            c.rows_mut(0, p).copy_from(&f.solve_vec(&r2));
            c
        }
        Err(_) => return Err(Error::RankDeficient { outcome: r }),
    };
    Ok(coef.rows(0, p).into_owned())
}

/// Full ECM driver.
pub fn fit(
    data: &[ObservationRecord],
    design: &OutcomeDesign,
    config: &FitConfig,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::InsufficientData("fit needs records".into()));
    }
    for rec in data {
        rec.matches(design)?;
    }
    if config.max_iter == 0 || !(config.tol > 0.0) {
        return Err(Error::InvalidParameter(
            "max_iter >= 1 and tol > 0 required".into(),
        ));
    }
    let mut warnings = Vec::new();
    let mut params = match &config.init {
        Some(p) => normalize_for_fit(p.clone(), design, &mut warnings)?,
        None => {
            let (p, w) = initialize(data, design, config.seed)?;
            warnings.extend(w);
            p
        }
    };
    params = canonicalize_gauge(params)?;

    // Cache per-record structures; partitions depend only on the indicators.
    let parts: Vec<CensorPartition> = data.iter().map(censor_partition).collect();
    let y_obs: Vec<DVector<f64>> = data
        .iter()
        .zip(&parts)
        .map(|(rec, part)| observed_vector(rec, part))
        .collect();
    let estep_seeds: Vec<u64> = (0..data.len())
        .map(|i| seed::derive(config.seed, seed::stream::E_STEP, i as u64))
        .collect();

    let mut rect_tol = config.rect_tol;
    let mut prev = loglik(&params, data, rect_tol, config.seed)?.total;
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut low_mass_records = 0usize;

    for iter in 0..config.max_iter {
        let mut attempt = 0usize;
        loop {
            let (candidate, diag, low_mass) = ecm_iteration(
                &params,
                data,
                design,
                &parts,
                &y_obs,
                &estep_seeds,
                rect_tol,
                config,
            )
            .map_err(|e| e.at_iteration(iter))?;
            let ll = loglik(&candidate, data, rect_tol, config.seed)
                .map_err(|e| e.at_iteration(iter))?
                .total;
            if ll >= prev - config.monotonicity_slack {
                low_mass_records += low_mass;
                params = candidate;
                trace.push(ll);
                if let Some(d) = diag {
                    diagnostics.push(d);
                }
                let rel = ((ll / prev) - 1.0).abs();
                prev = ll;
                if rel < config.tol {
                    converged = true;
                }
                break;
            }
            if attempt == 0 {
                // Retry once at finer tolerance; re-anchor the comparison
                // point so both sides are evaluated at the same accuracy.
                attempt = 1;
                rect_tol /= 10.0;
                warnings.push(format!(
                    "iteration {iter}: log-likelihood dipped {:.3e}; retrying at rect_tol {rect_tol:.1e}",
                    prev - ll
                ));
                prev = loglik(&params, data, rect_tol, config.seed)
                    .map_err(|e| e.at_iteration(iter))?
                    .total;
                continue;
            }
            let mut tail: Vec<f64> = trace.iter().rev().take(4).cloned().collect();
            tail.reverse();
            tail.push(ll);
            return Err(Error::MonotonicityViolation {
                iteration: iter,
                drop: prev - ll,
                slack: config.monotonicity_slack,
                trace_tail: tail,
            });
        }
        if converged {
            break;
        }
    }

    if low_mass_records > 0 {
        warnings.push(format!(
            "{low_mass_records} record evaluations had rectangle mass below 1e-12"
        ));
    }
    Ok(FitResult {
        iterations: trace.len(),
        params,
        loglik_trace: trace,
        converged,
        warnings,
        diagnostics,
    })
}

/// One E-step plus both CM steps. Returns the updated parameters, optional
/// diagnostics, and the number of low-mass records.
#[allow(clippy::too_many_arguments)]
fn ecm_iteration(
    params: &ModelParams,
    data: &[ObservationRecord],
    design: &OutcomeDesign,
    parts: &[CensorPartition],
    y_obs: &[DVector<f64>],
    estep_seeds: &[u64],
    rect_tol: f64,
    config: &FitConfig,
) -> Result<(ModelParams, Option<IterationDiagnostics>, usize)> {
    let lambda = params.lambda()?;
    let mus: Vec<DVector<f64>> = data
        .iter()
        .map(|rec| mean_vector(params, rec))
        .collect::<Result<_>>()?;
    let estep: Vec<EStepResult> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            e_step_with(
                &lambda,
                &mus[i],
                &parts[i],
                &y_obs[i],
                rect_tol,
                estep_seeds[i],
            )
            .map_err(|e| e.at_record(i))
        })
        .collect::<Result<_>>()?;
    let low_mass = estep.iter().filter(|e| e.low_mass).count();

    // CM-step 1: regression coefficients.
    let sigma_mat = params.sigma_matrix();
    let (beta, gamma) = cm_step_regression(design, data, &estep, &sigma_mat, &params.psi)?;
    let mid = ModelParams::new(beta, gamma, params.sigma, params.rho, params.psi.clone())?;

    // Cross-product matrices at the fresh coefficients.
    let deltas: Vec<DMatrix<f64>> = data
        .iter()
        .zip(&estep)
        .map(|(rec, es)| delta_hat(&mid, es, rec))
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<DMatrix<f64>>> =
        deltas.iter().map(factor_columns).collect::<Result<_>>()?;

    let diag = if config.capture_diagnostics {
        let qc = q_column_form(&columns, &sigma_mat, &params.psi);
        let qk = q_kron_form(&deltas, &sigma_mat, &params.psi)?;
        let min_eig = deltas
            .iter()
            .map(|d| {
                let sym = (d + d.transpose()) * 0.5;
                sym.symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min);
        Some(IterationDiagnostics {
            q_column_form: qc,
            q_kron_form: qk,
            min_delta_eigenvalue: min_eig,
        })
    } else {
        None
    };

    // CM-step 2: covariances with the identifiability reset, then the gauge
    // normalization (a pure relabeling along the invariant ridge).
    let (sigma, rho, psi) = cm_step_covariance(&columns, &params.psi, config.constraint_reset)?;
    let out = canonicalize_gauge(ModelParams::new(mid.beta, mid.gamma, sigma, rho, psi)?)?;
    Ok((out, diag, low_mass))
}

/// Gauge fixing along the selection-scale ridge.
///
/// Selection scores are sign-observed, so the observed-data likelihood is
/// exactly invariant under (sigma, Psi, gamma) -> (c sigma, Psi / c^2,
/// gamma / c) for any c > 0; the Sigma_22 = 1 constraint does not pin this
/// direction once Psi is free. Reported parameters fix the gauge at
/// mean(diag Psi) = 1, matching the correlation-form Psi of the generator.
fn canonicalize_gauge(params: ModelParams) -> Result<ModelParams> {
    let rr = params.n_outcomes();
    if rr == 1 {
        return Ok(params);
    }
    let mean_diag = (0..rr).map(|r| params.psi.entry(r, r)).sum::<f64>() / rr as f64;
    if !(mean_diag > 0.0) || !mean_diag.is_finite() {
        return Err(Error::NotPositiveDefinite("gauge normalization".into()));
    }
    let c = mean_diag.sqrt();
    if (c - 1.0).abs() < 1e-14 {
        return Ok(params);
    }
    ModelParams::new(
        params.beta,
        params.gamma.iter().map(|g| g / c).collect(),
        params.sigma * c,
        params.rho,
        SpdMatrix::new(params.psi.mat() / (c * c))?,
    )
}

/// Warm starts for R = 1 must respect the pinned Psi = [1]: absorb any
/// free Psi scale into (sigma, gamma).
fn normalize_for_fit(
    params: ModelParams,
    design: &OutcomeDesign,
    warnings: &mut Vec<String>,
) -> Result<ModelParams> {
    let got = params.design()?;
    if &got != design {
        return Err(Error::DimensionMismatch(
            "warm-start parameters do not match the design".into(),
        ));
    }
    if design.n_outcomes() == 1 && (params.psi.entry(0, 0) - 1.0).abs() > 1e-12 {
        let psi11 = params.psi.entry(0, 0);
        warnings.push(format!(
            "R = 1 warm start had Psi = [{psi11:.6}]; rescaled into sigma and gamma"
        ));
        let scale = psi11.sqrt();
        return ModelParams::new(
            params.beta,
            vec![&params.gamma[0] / scale],
            params.sigma * scale,
            params.rho,
            SpdMatrix::identity(1),
        );
    }
    Ok(params)
}
