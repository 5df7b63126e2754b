//! Matrix-variate Heckman selection models (MSLn).
//!
//! Building blocks for fitting multiple correlated outcomes under outcome-wise
//! sample selection: Gaussian kernels and rectangle probabilities, truncated
//! multivariate-normal moments, the exact observed-data likelihood, a
//! closed-form ECM estimator, skew-normal selection-bias corrections, a
//! simulation/benchmark harness, and nonparametric bootstrap inference.
//!
//! The response of subject i is a latent 2 x R matrix (outcomes over latent
//! selection scores) with matrix-normal errors N(0, Sigma, Psi), Sigma_22 = 1.
//! Outcome r is observed exactly when its selection score is positive.

// Full-precision tabulated constants, and `!(x > 0)` as the NaN-catching
// validity idiom.
#![allow(clippy::excessive_precision)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod ecm;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod mvn;
pub mod normal;
pub mod seed;
pub mod sim;
pub mod sun;
pub mod truncmoments;

pub use error::{Error, Result};
pub use linalg::{kron, unvec, vec_cols, CholeskyFactor, SpdMatrix};
pub use model::{
    build_design_row, censor_partition, mean_matrix, sigma_matrix, CensorPartition, ModelParams,
    ObservationRecord, OutcomeDesign,
};
pub use mvn::{matnorm_logpdf, mvn_logpdf, mvn_rect_prob, RectProbResult};
pub use truncmoments::{conditional_censored_moments, tmvn_moments, TruncMoments};

pub use nalgebra::{DMatrix, DVector};
