//! First and second moments of a multivariate normal restricted to an
//! axis-aligned rectangle.
//!
//! One-dimensional truncations use the exact closed form. Higher dimensions
//! use the classical reduction (Tallis; Manjunath & Wilhelm) expressing the
//! moments through rectangle probabilities of dimension d-1 and d-2, so the
//! accuracy is inherited from [`crate::mvn::mvn_rect_prob`]. Coordinates that
//! are unbounded on both sides never enter the reduction: their moments follow
//! exactly from conditional-normal propagation off the truncated block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{gather, gather_block, SpdMatrix};
use crate::model::CensorPartition;
use crate::mvn::mvn_rect_prob;
use crate::normal;
use crate::seed;

/// Probability mass below which the moments are flagged as low-mass.
pub const LOW_MASS_THRESHOLD: f64 = 1e-12;
/// Probability mass below which the truncation is treated as degenerate.
pub const DEGENERATE_THRESHOLD: f64 = 1e-300;

/// Moments of a rectangle-truncated multivariate normal.
#[derive(Debug, Clone)]
pub struct TruncMoments {
    /// E[Y | rectangle].
    pub mean: DVector<f64>,
    /// Covariance about the truncated mean (symmetric PSD).
    pub cov: DMatrix<f64>,
    /// E[Y Y' | rectangle] = cov + mean mean'.
    pub second_moment: DMatrix<f64>,
    /// Set when the rectangle mass fell below [`LOW_MASS_THRESHOLD`].
    pub low_mass: bool,
}

impl TruncMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Zero-dimensional marker for records without censored components.
    pub fn empty() -> Self {
        TruncMoments {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
            second_moment: DMatrix::zeros(0, 0),
            low_mass: false,
        }
    }

    fn finish(mean: DVector<f64>, cov: DMatrix<f64>, low_mass: bool) -> Self {
        let cov = (&cov + cov.transpose()) * 0.5;
        let second_moment = &cov + &mean * mean.transpose();
        TruncMoments {
            mean,
            cov,
            second_moment,
            low_mass,
        }
    }
}

fn issue_seed(seed: u64, counter: &mut u64) -> u64 {
    let s = seed::derive(seed, seed::stream::RECT, *counter);
    *counter += 1;
    s
}

/// Moments of N(mu, cov) conditioned on lower < Y < upper.
pub fn tmvn_moments(
    mu: &DVector<f64>,
    cov: &SpdMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    tol: f64,
    seed: u64,
) -> Result<TruncMoments> {
    let d = cov.dim();
    if mu.len() != d || lower.len() != d || upper.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "tmvn_moments: mu {} / lower {} / upper {} / cov {}",
            mu.len(),
            lower.len(),
            upper.len(),
            d
        )));
    }
    for i in 0..d {
        if lower[i] > upper[i] {
            return Err(Error::InvalidParameter(format!(
                "bounds lower[{i}] > upper[{i}]"
            )));
        }
    }

    // Split into truncated block T (some finite bound) and free block F.
    let trunc: Vec<usize> = (0..d)
        .filter(|&i| lower[i] > f64::NEG_INFINITY || upper[i] < f64::INFINITY)
        .collect();
    if trunc.is_empty() {
        return Ok(TruncMoments::finish(mu.clone(), cov.mat().clone(), false));
    }
    let free: Vec<usize> = (0..d).filter(|&i| !trunc.contains(&i)).collect();

    let mu_t = gather(mu, &trunc);
    let cov_t = cov.submatrix(&trunc)?;
    let lo_t = gather(lower, &trunc);
    let hi_t = gather(upper, &trunc);
    let (m_t, v_t, low_mass) = truncated_block_moments(&mu_t, &cov_t, &lo_t, &hi_t, tol, seed)?;

    if free.is_empty() {
        return Ok(TruncMoments::finish(m_t, v_t, low_mass));
    }

    // Free block: X_F | X_T is normal, so
    //   E[X_F] = mu_F + A (E[X_T] - mu_T),          A = Cov_FT Cov_TT^-1
    //   Var[X_F] = Schur_FF + A V_T A'
    //   Cov[X_F, X_T] = A V_T.
    let cov_ft = gather_block(cov.mat(), &free, &trunc);
    let a = cov_t.chol().solve_mat(&cov_ft.transpose()).transpose();
    let mu_f = gather(mu, &free);
    let m_f = &mu_f + &a * (&m_t - &mu_t);
    let schur_ff = gather_block(cov.mat(), &free, &free) - &a * cov_ft.transpose();
    let v_ff = schur_ff + &a * &v_t * a.transpose();
    let v_ft = &a * &v_t;

    let mut mean = DVector::zeros(d);
    let mut v = DMatrix::zeros(d, d);
    for (ai, &i) in trunc.iter().enumerate() {
        mean[i] = m_t[ai];
        for (bj, &j) in trunc.iter().enumerate() {
            v[(i, j)] = v_t[(ai, bj)];
        }
    }
    for (ai, &i) in free.iter().enumerate() {
        mean[i] = m_f[ai];
        for (bj, &j) in free.iter().enumerate() {
            v[(i, j)] = v_ff[(ai, bj)];
        }
        for (bj, &j) in trunc.iter().enumerate() {
            v[(i, j)] = v_ft[(ai, bj)];
            v[(j, i)] = v_ft[(ai, bj)];
        }
    }
    Ok(TruncMoments::finish(mean, v, low_mass))
}

/// Moments of the truncated block itself; every coordinate has at least one
/// finite bound here.
fn truncated_block_moments(
    mu: &DVector<f64>,
    cov: &SpdMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    tol: f64,
    seed: u64,
) -> Result<(DVector<f64>, DMatrix<f64>, bool)> {
    let d = cov.dim();
    if d == 1 {
        let mass = normal::truncated_mass_1d(mu[0], cov.entry(0, 0), lower[0], upper[0]);
        if mass < DEGENERATE_THRESHOLD {
            return Err(Error::DegenerateTruncation);
        }
        let (m, v) = normal::truncated_moments_1d(mu[0], cov.entry(0, 0), lower[0], upper[0])
            .ok_or(Error::DegenerateTruncation)?;
        return Ok((
            DVector::from_element(1, m),
            DMatrix::from_element(1, 1, v),
            mass < LOW_MASS_THRESHOLD,
        ));
    }

    // Centered problem: X ~ N(0, S) on [a, b].
    let s = cov.mat();
    let a: DVector<f64> = DVector::from_iterator(
        d,
        (0..d).map(|i| {
            if lower[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lower[i] - mu[i]
            }
        }),
    );
    let b: DVector<f64> = DVector::from_iterator(
        d,
        (0..d).map(|i| {
            if upper[i] == f64::INFINITY {
                f64::INFINITY
            } else {
                upper[i] - mu[i]
            }
        }),
    );

    let sub_tol = tol / 10.0;
    let mut counter = 0u64;
    let zero = DVector::zeros(d);
    let alpha =
        mvn_rect_prob(&a, &b, &zero, cov, sub_tol, issue_seed(seed, &mut counter))?.probability;
    if alpha < DEGENERATE_THRESHOLD {
        return Err(Error::DegenerateTruncation);
    }
    let low_mass = alpha < LOW_MASS_THRESHOLD;

    // Face densities G_k(x) = phi(x; s_kk) * P(rest of rectangle | X_k = x).
    let mut g_lo = vec![0.0f64; d];
    let mut g_hi = vec![0.0f64; d];
    for k in 0..d {
        if a[k].is_finite() {
            g_lo[k] = face_density(s, &a, &b, k, a[k], sub_tol, seed, &mut counter)?;
        }
        if b[k].is_finite() {
            g_hi[k] = face_density(s, &a, &b, k, b[k], sub_tol, seed, &mut counter)?;
        }
    }

    // First moments: alpha * E[X] = S * q with q_k = G_k(a_k) - G_k(b_k).
    let q = DVector::from_iterator(d, (0..d).map(|k| g_lo[k] - g_hi[k]));
    let m = s * &q / alpha;

    // Edge densities for the pair corrections, symmetric in (k, q).
    let mut corner = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in (k + 1)..d {
            let mut sum = 0.0;
            for (xk, sk) in [(a[k], 1.0), (b[k], -1.0)] {
                for (xl, sl) in [(a[l], 1.0), (b[l], -1.0)] {
                    if xk.is_finite() && xl.is_finite() {
                        sum += sk
                            * sl
                            * edge_density(s, &a, &b, k, l, xk, xl, sub_tol, seed, &mut counter)?;
                    }
                }
            }
            corner[(k, l)] = sum;
            corner[(l, k)] = sum;
        }
    }

    // Second moments about zero:
    // E[X_i X_j] = s_ij + (1/alpha) sum_k s_ik [ s_jk/s_kk * (a_k G_k(a_k) - b_k G_k(b_k))
    //            + sum_{l != k} (s_jl - s_kl s_jk / s_kk) * corner_kl ].
    let h: Vec<f64> = (0..d)
        .map(|k| {
            let lo_term = if a[k].is_finite() {
                a[k] * g_lo[k]
            } else {
                0.0
            };
            let hi_term = if b[k].is_finite() {
                b[k] * g_hi[k]
            } else {
                0.0
            };
            lo_term - hi_term
        })
        .collect();

    let mut second = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                let mut inner = s[(j, k)] / s[(k, k)] * h[k];
                for l in 0..d {
                    if l != k {
                        inner += (s[(j, l)] - s[(k, l)] * s[(j, k)] / s[(k, k)]) * corner[(k, l)];
                    }
                }
                acc += s[(i, k)] * inner;
            }
            second[(i, j)] = s[(i, j)] + acc / alpha;
        }
    }

    let v = &second - &m * m.transpose();
    Ok((&m + mu, v, low_mass))
}

/// G_k(x): density of X_k at x times the conditional rectangle mass of the
/// remaining coordinates.
#[allow(clippy::too_many_arguments)]
fn face_density(
    s: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    k: usize,
    x: f64,
    tol: f64,
    seed: u64,
    counter: &mut u64,
) -> Result<f64> {
    let d = s.nrows();
    let skk = s[(k, k)];
    let sd = skk.sqrt();
    let dens = normal::pdf(x / sd) / sd;
    if dens == 0.0 {
        return Ok(0.0);
    }
    if d == 1 {
        return Ok(dens);
    }
    let rest: Vec<usize> = (0..d).filter(|&i| i != k).collect();
    let s_rk = DVector::from_iterator(d - 1, rest.iter().map(|&i| s[(i, k)]));
    let cond_mu = &s_rk * (x / skk);
    let cond_cov = gather_block(s, &rest, &rest) - &s_rk * s_rk.transpose() / skk;
    let cond_cov = SpdMatrix::new(cond_cov)?;
    let lo = gather(a, &rest);
    let hi = gather(b, &rest);
    let p = mvn_rect_prob(
        &lo,
        &hi,
        &cond_mu,
        &cond_cov,
        tol,
        issue_seed(seed, counter),
    )?;
    Ok(dens * p.probability)
}

/// G_kl(x, y): bivariate density of (X_k, X_l) at (x, y) times the conditional
/// rectangle mass of the remaining coordinates.
#[allow(clippy::too_many_arguments)]
fn edge_density(
    s: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    k: usize,
    l: usize,
    x: f64,
    y: f64,
    tol: f64,
    seed: u64,
    counter: &mut u64,
) -> Result<f64> {
    let d = s.nrows();
    let skk = s[(k, k)];
    let sll = s[(l, l)];
    let skl = s[(k, l)];
    let det = skk * sll - skl * skl;
    if det <= 0.0 {
        return Err(Error::NotPositiveDefinite(
            "pair block in moment reduction".into(),
        ));
    }
    let quad = (sll * x * x - 2.0 * skl * x * y + skk * y * y) / det;
    let dens = (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
    if dens == 0.0 {
        return Ok(0.0);
    }
    if d == 2 {
        return Ok(dens);
    }
    let rest: Vec<usize> = (0..d).filter(|&i| i != k && i != l).collect();
    let s_r_pair = gather_block(s, &rest, &[k, l]);
    // (X_k, X_l) block inverse applied to (x, y).
    let inv_xy =
        DVector::from_column_slice(&[(sll * x - skl * y) / det, (skk * y - skl * x) / det]);
    let cond_mu = &s_r_pair * inv_xy;
    let pair_inv = DMatrix::from_row_slice(2, 2, &[sll / det, -skl / det, -skl / det, skk / det]);
    let cond_cov = gather_block(s, &rest, &rest) - &s_r_pair * pair_inv * s_r_pair.transpose();
    let cond_cov = SpdMatrix::new(cond_cov)?;
    let lo = gather(a, &rest);
    let hi = gather(b, &rest);
    let p = mvn_rect_prob(
        &lo,
        &hi,
        &cond_mu,
        &cond_cov,
        tol,
        issue_seed(seed, counter),
    )?;
    Ok(dens * p.probability)
}

/// Conditional moments of the censored block given the observed block:
/// computes mu^{co} and Lambda^{cc.o} by Schur complement, then truncates over
/// the partition's rectangle.
pub fn conditional_censored_moments(
    mu_full: &DVector<f64>,
    cov_full: &SpdMatrix,
    partition: &CensorPartition,
    y_obs: &DVector<f64>,
    tol: f64,
    seed: u64,
) -> Result<TruncMoments> {
    let d = cov_full.dim();
    let mut seen = vec![false; d];
    for &i in partition.obs_idx.iter().chain(partition.cens_idx.iter()) {
        if i >= d || seen[i] {
            return Err(Error::DimensionMismatch(
                "partition indices must be disjoint and in range".into(),
            ));
        }
        seen[i] = true;
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::DimensionMismatch(
            "partition must cover all components".into(),
        ));
    }
    if y_obs.len() != partition.n_observed() {
        return Err(Error::DimensionMismatch(
            "observed vector length does not match partition".into(),
        ));
    }

    if partition.n_censored() == 0 {
        return Ok(TruncMoments::empty());
    }

    let mu_c = gather(mu_full, &partition.cens_idx);
    if partition.n_observed() == 0 {
        let cov_c = cov_full.submatrix(&partition.cens_idx)?;
        return tmvn_moments(&mu_c, &cov_c, &partition.lower, &partition.upper, tol, seed);
    }

    let mu_o = gather(mu_full, &partition.obs_idx);
    let cov_oo = cov_full.submatrix(&partition.obs_idx)?;
    let cov_co = gather_block(cov_full.mat(), &partition.cens_idx, &partition.obs_idx);
    let resid = y_obs - &mu_o;
    let mu_co = &mu_c + &cov_co * cov_oo.chol().solve_vec(&resid);
    let cov_cc = gather_block(cov_full.mat(), &partition.cens_idx, &partition.cens_idx);
    let cov_cc_o = &cov_cc - &cov_co * cov_oo.chol().solve_mat(&cov_co.transpose());
    let cov_cc_o = SpdMatrix::new(cov_cc_o)?;
    tmvn_moments(
        &mu_co,
        &cov_cc_o,
        &partition.lower,
        &partition.upper,
        tol,
        seed,
    )
}
