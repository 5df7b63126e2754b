//! Dense linear-algebra kernels: column-stacking vectorization, Kronecker
//! products, and validated symmetric positive-definite matrices with a
//! jittered Cholesky policy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-stacking vectorization: column j of `m` occupies entries
/// `j*rows .. (j+1)*rows` of the result.
pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product; block (i, j) of the result is `a[(i, j)] * b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Lower-triangular Cholesky factor with a strictly positive diagonal.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Column j of L as a vector.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.lower.column(j).into_owned()
    }

    /// log |A| = 2 * sum(log diag(L)).
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solve A x = b.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        self.lower.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// Solve A X = B.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        self.lower.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// Quadratic form r' A^{-1} r through one triangular solve.
    pub fn inv_quad_form(&self, r: &DVector<f64>) -> f64 {
        let mut z = r.clone();
        self.lower.solve_lower_triangular_mut(&mut z);
        z.norm_squared()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Bare Cholesky attempt without jitter.
fn try_cholesky(m: &DMatrix<f64>) -> Option<CholeskyFactor> {
    nalgebra::Cholesky::new(m.clone()).map(|c| CholeskyFactor { lower: c.l() })
}

/// Cholesky with the single-jitter retry policy: on failure, add
/// `1e-10 * trace/dim` to the diagonal once before giving up.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, context: &str) -> Result<CholeskyFactor> {
    if let Some(f) = try_cholesky(m) {
        return Ok(f);
    }
    let dim = m.nrows();
    let jitter = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
    let mut jittered = m.clone();
    for i in 0..dim {
        jittered[(i, i)] += jitter;
    }
    try_cholesky(&jittered).ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))
}

/// Symmetric positive-definite matrix, validated on construction.
///
/// The stored entries are exactly symmetric (the input is symmetrized after a
/// tolerance check) and the Cholesky factor is kept alongside, so log-dets,
/// solves and inverses are cheap.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    chol: CholeskyFactor,
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "SPD matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "SPD matrix has non-finite entries".into(),
            ));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::InvalidParameter(format!(
                "matrix is not symmetric: max asymmetry {asym:.3e} at scale {scale:.3e}"
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let chol = cholesky_with_jitter(&sym, "SpdMatrix::new")?;
        Ok(Self { mat: sym, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.chol.log_det()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        (&inv + inv.transpose()) * 0.5
    }

    /// Principal submatrix on `idx`, which is SPD again.
    pub fn submatrix(&self, idx: &[usize]) -> Result<SpdMatrix> {
        let k = idx.len();
        let mut out = DMatrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self.mat[(i, j)];
            }
        }
        SpdMatrix::new(out)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }
}

/// Gather `v[idx]`.
pub fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Gather the (rows, cols) block of `m`.
pub fn gather_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            out[(a, b)] = m[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn vec_is_column_stacking() {
        // vec([[1,2],[3,4]]) = (1,3,2,4)
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_cols(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let one = DMatrix::from_element(1, 1, 7.5);
        assert_eq!(vec_cols(&one).as_slice(), &[7.5]);
    }

    #[test]
    fn kron_identities() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(kron(&i2, &i3), DMatrix::identity(6, 6));
    }

    #[test]
    fn kron_block_structure_sigma_psi() {
        // [[s^2, rs],[rs, 1]] (x) Psi has blocks s^2*Psi, rs*Psi, Psi.
        let (s, r) = (2.0, 0.6);
        let sigma = DMatrix::from_row_slice(2, 2, &[s * s, r * s, r * s, 1.0]);
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let k = kron(&sigma, &psi);
        assert_eq!(k.view((0, 0), (2, 2)).clone_owned(), &psi * (s * s));
        assert_eq!(k.view((0, 2), (2, 2)).clone_owned(), &psi * (r * s));
        assert_eq!(k.view((2, 2), (2, 2)).clone_owned(), psi);
    }

    #[test]
    fn spd_validates_and_solves() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.2, 1.2, 1.0]);
        let spd = SpdMatrix::new(m.clone()).unwrap();
        assert_relative_eq!(
            spd.log_det(),
            (4.0 * 1.0 - 1.44f64).ln(),
            max_relative = 1e-12
        );
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let x = spd.chol().solve_vec(&b);
        assert_relative_eq!((m * x - b).norm(), 0.0, epsilon = 1e-12);

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0]);
        assert!(SpdMatrix::new(asym).is_err());
        let nonpd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdMatrix::new(nonpd).is_err());
    }

    #[test]
    fn jitter_rescues_semidefinite_roundoff() {
        // Rank-deficient Gram matrix: PSD but not PD; jitter should rescue it.
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let g = &v * v.transpose();
        let f = cholesky_with_jitter(&g, "test").unwrap();
        let err = (f.reconstruct() - &g).amax();
        assert!(err < 1e-8, "reconstruction error {err}");
    }

    proptest! {
        #[test]
        fn mixed_product_property(a_entries in prop::collection::vec(-3.0f64..3.0, 4),
                                  b_entries in prop::collection::vec(-3.0f64..3.0, 9),
                                  c_entries in prop::collection::vec(-3.0f64..3.0, 4),
                                  d_entries in prop::collection::vec(-3.0f64..3.0, 9)) {
            let a = DMatrix::from_row_slice(2, 2, &a_entries);
            let b = DMatrix::from_row_slice(3, 3, &b_entries);
            let c = DMatrix::from_row_slice(2, 2, &c_entries);
            let d = DMatrix::from_row_slice(3, 3, &d_entries);
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn vec_unvec_roundtrip(entries in prop::collection::vec(-10.0f64..10.0, 12)) {
            let m = DMatrix::from_column_slice(3, 4, &entries);
            let back = unvec(&vec_cols(&m), 3, 4);
            prop_assert_eq!(m, back);
        }

        #[test]
        fn cholesky_roundtrip_spd(seed in 0u64..200) {
            use rand::SeedableRng;
            use rand::Rng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 4;
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let g = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
            let spd = SpdMatrix::new(g.clone()).unwrap();
            let rel = (spd.chol().reconstruct() - &g).norm() / g.norm();
            prop_assert!(rel < 1e-10);
        }
    }
}
