//! The MSLn data model.
//!
//! Each subject carries a latent 2 x R response matrix: row 1 holds the R
//! outcomes, row 2 the latent selection scores. Outcome r is observed iff its
//! selection score is positive. Vectorization is column-stacking throughout,
//! so component 2r is outcome r and component 2r+1 is selection r, and the
//! joint covariance of the vectorized matrix is Psi (x) Sigma.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{kron, SpdMatrix};

/// Outcome/selection covariate dimensions: p_r outcome covariates and q_r
/// selection covariates per outcome r = 1..R.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeDesign {
    p: Vec<usize>,
    q: Vec<usize>,
}

impl OutcomeDesign {
    pub fn new(p: Vec<usize>, q: Vec<usize>) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() {
            return Err(Error::DimensionMismatch(format!(
                "design needs matching non-empty p ({}) and q ({})",
                p.len(),
                q.len()
            )));
        }
        if p.contains(&0) || q.contains(&0) {
            return Err(Error::InvalidParameter("p_r and q_r must be >= 1".into()));
        }
        Ok(Self { p, q })
    }

    /// Same dimensions for every outcome.
    pub fn homogeneous(r: usize, p: usize, q: usize) -> Result<Self> {
        Self::new(vec![p; r], vec![q; r])
    }

    pub fn n_outcomes(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self, r: usize) -> usize {
        self.p[r]
    }

    pub fn q(&self, r: usize) -> usize {
        self.q[r]
    }

    pub fn p_total(&self) -> usize {
        self.p.iter().sum()
    }

    pub fn q_total(&self) -> usize {
        self.q.iter().sum()
    }

    /// Offset of outcome r's (beta_r, gamma_r) block in the stacked
    /// coefficient vector.
    pub fn block_offset(&self, r: usize) -> usize {
        (0..r).map(|s| self.p[s] + self.q[s]).sum()
    }

    pub fn coef_len(&self) -> usize {
        self.p_total() + self.q_total()
    }
}

/// Full parameter set theta = (beta_r, gamma_r; sigma, rho; Psi) with the
/// identifiability constraint Sigma_22 = 1 baked in.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub beta: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
    pub sigma: f64,
    pub rho: f64,
    pub psi: SpdMatrix,
}

impl ModelParams {
    pub fn new(
        beta: Vec<DVector<f64>>,
        gamma: Vec<DVector<f64>>,
        sigma: f64,
        rho: f64,
        psi: SpdMatrix,
    ) -> Result<Self> {
        if beta.len() != gamma.len() || beta.is_empty() {
            return Err(Error::DimensionMismatch(
                "beta and gamma must have the same non-zero number of outcomes".into(),
            ));
        }
        if psi.dim() != beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "psi is {}x{} but there are {} outcomes",
                psi.dim(),
                psi.dim(),
                beta.len()
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be in (-1, 1), got {rho}"
            )));
        }
        Ok(Self {
            beta,
            gamma,
            sigma,
            rho,
            psi,
        })
    }

    /// Normalize an unconstrained (sigma_mat, psi) pair to the canonical
    /// parameterization: Sigma is rescaled so its (2,2) entry is one and Psi
    /// absorbs the factor, leaving Psi (x) Sigma unchanged.
    pub fn from_unconstrained(
        beta: Vec<DVector<f64>>,
        gamma: Vec<DVector<f64>>,
        sigma_mat: &DMatrix<f64>,
        psi: &DMatrix<f64>,
    ) -> Result<Self> {
        if sigma_mat.nrows() != 2 || sigma_mat.ncols() != 2 {
            return Err(Error::DimensionMismatch("sigma must be 2x2".into()));
        }
        let s22 = sigma_mat[(1, 1)];
        if !(s22 > 0.0) {
            return Err(Error::NotPositiveDefinite(
                "sigma has non-positive (2,2) entry".into(),
            ));
        }
        let sigma_n = sigma_mat / s22;
        let sigma = sigma_n[(0, 0)].sqrt();
        let rho = (sigma_n[(0, 1)] / sigma).clamp(-1.0 + 1e-8, 1.0 - 1e-8);
        let psi_n = SpdMatrix::new(psi * s22)?;
        Self::new(beta, gamma, sigma, rho, psi_n)
    }

    pub fn n_outcomes(&self) -> usize {
        self.beta.len()
    }

    pub fn design(&self) -> Result<OutcomeDesign> {
        OutcomeDesign::new(
            self.beta.iter().map(|b| b.len()).collect(),
            self.gamma.iter().map(|g| g.len()).collect(),
        )
    }

    /// The 2x2 outcome/selection covariance [[sigma^2, rho*sigma], [rho*sigma, 1]].
    pub fn sigma_matrix(&self) -> SpdMatrix {
        sigma_matrix(self.sigma, self.rho).expect("validated on construction")
    }

    /// Joint covariance Lambda = Psi (x) Sigma of the column-stacked response.
    pub fn lambda(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(kron(self.psi.mat(), self.sigma_matrix().mat()))
    }

    /// Flattened parameter values paired with stable names, in the order
    /// beta_r, gamma_r (r = 1..R), sigma, rho, upper triangle of Psi.
    pub fn flatten(&self) -> (Vec<String>, Vec<f64>) {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (r, b) in self.beta.iter().enumerate() {
            for (j, v) in b.iter().enumerate() {
                names.push(format!("beta{}_{}", r + 1, j));
                values.push(*v);
            }
        }
        for (r, g) in self.gamma.iter().enumerate() {
            for (j, v) in g.iter().enumerate() {
                names.push(format!("gamma{}_{}", r + 1, j));
                values.push(*v);
            }
        }
        names.push("sigma".into());
        values.push(self.sigma);
        names.push("rho".into());
        values.push(self.rho);
        let rr = self.psi.dim();
        for i in 0..rr {
            for j in i..rr {
                names.push(format!("psi{}_{}", i + 1, j + 1));
                values.push(self.psi.entry(i, j));
            }
        }
        (names, values)
    }

    /// Outcome-coefficient matrix with beta_r as column r (requires equal p_r).
    pub fn beta_matrix(&self) -> Result<DMatrix<f64>> {
        columns_to_matrix(&self.beta)
    }

    /// Selection-coefficient matrix with gamma_r as column r (requires equal q_r).
    pub fn gamma_matrix(&self) -> Result<DMatrix<f64>> {
        columns_to_matrix(&self.gamma)
    }
}

fn columns_to_matrix(cols: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let rows = cols[0].len();
    if cols.iter().any(|c| c.len() != rows) {
        return Err(Error::DimensionMismatch(
            "coefficient vectors have unequal lengths across outcomes".into(),
        ));
    }
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    Ok(m)
}

/// One subject's covariates, selection indicators and observed outcomes.
#[derive(Debug, Clone)]
pub struct ObservationRecord {
    pub x: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub c: Vec<bool>,
    /// Observed outcome value, present iff the indicator is set.
    pub y_obs: Vec<Option<f64>>,
}

impl ObservationRecord {
    pub fn new(
        x: Vec<DVector<f64>>,
        w: Vec<DVector<f64>>,
        c: Vec<bool>,
        y_obs: Vec<Option<f64>>,
    ) -> Result<Self> {
        let r = x.len();
        if w.len() != r || c.len() != r || y_obs.len() != r || r == 0 {
            return Err(Error::DimensionMismatch(
                "record fields must agree on the number of outcomes".into(),
            ));
        }
        for i in 0..r {
            match (c[i], y_obs[i]) {
                (true, Some(v)) if v.is_finite() => {}
                (false, None) => {}
                (true, Some(_)) => {
                    return Err(Error::InvalidParameter(format!(
                        "outcome {i} observed but non-finite"
                    )))
                }
                (true, None) => {
                    return Err(Error::InvalidParameter(format!(
                        "outcome {i} selected but no value supplied"
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::InvalidParameter(format!(
                        "outcome {i} not selected but a value was supplied"
                    )))
                }
            }
            if x[i].iter().any(|v| !v.is_finite()) || w[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite covariate for outcome {i}"
                )));
            }
        }
        Ok(Self { x, w, c, y_obs })
    }

    pub fn n_outcomes(&self) -> usize {
        self.x.len()
    }

    pub fn matches(&self, design: &OutcomeDesign) -> Result<()> {
        if self.n_outcomes() != design.n_outcomes() {
            return Err(Error::DimensionMismatch(format!(
                "record has {} outcomes, design has {}",
                self.n_outcomes(),
                design.n_outcomes()
            )));
        }
        for r in 0..design.n_outcomes() {
            if self.x[r].len() != design.p(r) || self.w[r].len() != design.q(r) {
                return Err(Error::DimensionMismatch(format!(
                    "record covariate dims ({}, {}) do not match design ({}, {}) at outcome {r}",
                    self.x[r].len(),
                    self.w[r].len(),
                    design.p(r),
                    design.q(r)
                )));
            }
        }
        Ok(())
    }
}

/// Observed/censored split of the 2R vectorized components with the rectangle
/// bounds implied by the selection indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct CensorPartition {
    /// Indices (into the 2R ordering) of observed components.
    pub obs_idx: Vec<usize>,
    /// Indices of censored components, ascending.
    pub cens_idx: Vec<usize>,
    /// Rectangle bounds over the censored components.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl CensorPartition {
    pub fn n_observed(&self) -> usize {
        self.obs_idx.len()
    }

    pub fn n_censored(&self) -> usize {
        self.cens_idx.len()
    }
}

/// Index of outcome r in the vectorized ordering.
#[inline]
pub fn outcome_index(r: usize) -> usize {
    2 * r
}

/// Index of selection score r in the vectorized ordering.
#[inline]
pub fn selection_index(r: usize) -> usize {
    2 * r + 1
}

/// Build the 2 x (p + q) block covariate matrix: row 1 interleaves x_r with
/// zero selection blocks, row 2 interleaves zero outcome blocks with w_r.
pub fn build_design_row(
    record: &ObservationRecord,
    design: &OutcomeDesign,
) -> Result<DMatrix<f64>> {
    record.matches(design)?;
    let mut z = DMatrix::zeros(2, design.coef_len());
    let mut off = 0;
    for r in 0..design.n_outcomes() {
        for j in 0..design.p(r) {
            z[(0, off + j)] = record.x[r][j];
        }
        off += design.p(r);
        for j in 0..design.q(r) {
            z[(1, off + j)] = record.w[r][j];
        }
        off += design.q(r);
    }
    Ok(z)
}

/// The 2 x (p_r + q_r) design block for outcome r.
pub fn design_block(record: &ObservationRecord, r: usize) -> DMatrix<f64> {
    let (p, q) = (record.x[r].len(), record.w[r].len());
    let mut z = DMatrix::zeros(2, p + q);
    for j in 0..p {
        z[(0, j)] = record.x[r][j];
    }
    for j in 0..q {
        z[(1, p + j)] = record.w[r][j];
    }
    z
}

/// Mean matrix M_i = Z_i B: column r is (x_r' beta_r, w_r' gamma_r).
pub fn mean_matrix(params: &ModelParams, record: &ObservationRecord) -> Result<DMatrix<f64>> {
    let rr = params.n_outcomes();
    if record.n_outcomes() != rr {
        return Err(Error::DimensionMismatch(
            "record and params disagree on the number of outcomes".into(),
        ));
    }
    let mut m = DMatrix::zeros(2, rr);
    for r in 0..rr {
        if record.x[r].len() != params.beta[r].len() || record.w[r].len() != params.gamma[r].len() {
            return Err(Error::DimensionMismatch(format!(
                "covariate length mismatch at outcome {r}"
            )));
        }
        m[(0, r)] = record.x[r].dot(&params.beta[r]);
        m[(1, r)] = record.w[r].dot(&params.gamma[r]);
    }
    Ok(m)
}

/// Mean vector vec(Z_i B) in the canonical component ordering.
pub fn mean_vector(params: &ModelParams, record: &ObservationRecord) -> Result<DVector<f64>> {
    Ok(crate::linalg::vec_cols(&mean_matrix(params, record)?))
}

/// Censoring partition induced by the selection indicators: selection r is
/// constrained to (0, inf) when c_r = 1 and to (-inf, 0] when c_r = 0;
/// unobserved outcomes are unrestricted; observed outcomes are data.
pub fn censor_partition(record: &ObservationRecord) -> CensorPartition {
    let rr = record.n_outcomes();
    let mut obs_idx = Vec::new();
    let mut cens_idx = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for r in 0..rr {
        if record.c[r] {
            obs_idx.push(outcome_index(r));
        } else {
            cens_idx.push(outcome_index(r));
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
        }
        cens_idx.push(selection_index(r));
        if record.c[r] {
            lower.push(0.0);
            upper.push(f64::INFINITY);
        } else {
            lower.push(f64::NEG_INFINITY);
            upper.push(0.0);
        }
    }
    // Components interleave as (outcome_r, selection_r); sort kept implicit
    // by construction order except outcome/selection within r, already ascending.
    let mut order: Vec<usize> = (0..cens_idx.len()).collect();
    order.sort_by_key(|&k| cens_idx[k]);
    let cens_sorted: Vec<usize> = order.iter().map(|&k| cens_idx[k]).collect();
    let lower = DVector::from_iterator(order.len(), order.iter().map(|&k| lower[k]));
    let upper = DVector::from_iterator(order.len(), order.iter().map(|&k| upper[k]));
    CensorPartition {
        obs_idx,
        cens_idx: cens_sorted,
        lower,
        upper,
    }
}

/// Observed outcome values in the order of `partition.obs_idx`.
pub fn observed_vector(record: &ObservationRecord, partition: &CensorPartition) -> DVector<f64> {
    DVector::from_iterator(
        partition.obs_idx.len(),
        partition.obs_idx.iter().map(|&i| {
            let r = i / 2;
            record.y_obs[r].expect("observed index implies a value")
        }),
    )
}

/// The constrained 2x2 covariance [[sigma^2, rho sigma], [rho sigma, 1]].
pub fn sigma_matrix(sigma: f64, rho: f64) -> Result<SpdMatrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be in (-1, 1), got {rho}"
        )));
    }
    SpdMatrix::new(DMatrix::from_row_slice(
        2,
        2,
        &[sigma * sigma, rho * sigma, rho * sigma, 1.0],
    ))
}
