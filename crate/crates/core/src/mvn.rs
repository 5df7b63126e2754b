//! Multivariate and matrix-variate normal densities, plus rectangle
//! probabilities Phi_p(a, b | mu, Sigma).
//!
//! Rectangle probabilities use the exact closed form in one dimension, the
//! Drezner-Wesolowsky/Genz quadrature in two, a Plackett path integral in
//! three, and a variable-reordered separation-of-variables transform
//! integrated by randomized quasi-Monte Carlo (Richtmyer sequence, shifted)
//! above that. Coordinates that are unbounded on both sides are marginalized
//! out exactly before integrating.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{vec_cols, SpdMatrix};
use crate::normal;

/// Result of a rectangle-probability evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectProbResult {
    /// Estimated probability, clamped to [0, 1].
    pub probability: f64,
    /// Estimated absolute error (3 standard errors for the QMC path).
    pub error_estimate: f64,
    /// Number of integrand evaluations (0 for closed-form paths).
    pub evaluations: u64,
}

/// Log-density of N(mu, cov) at y.
pub fn mvn_logpdf(y: &DVector<f64>, mu: &DVector<f64>, cov: &SpdMatrix) -> Result<f64> {
    let d = cov.dim();
    if y.len() != d || mu.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "mvn_logpdf: y {} / mu {} / cov {}",
            y.len(),
            mu.len(),
            d
        )));
    }
    let r = y - mu;
    let quad = cov.chol().inv_quad_form(&r);
    Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + cov.log_det() + quad))
}

/// Log-density of the matrix-variate normal N_{p x q}(m, sigma, psi) at y.
///
/// Equals `mvn_logpdf(vec(y), vec(m), psi (x) sigma)`.
pub fn matnorm_logpdf(
    y: &DMatrix<f64>,
    m: &DMatrix<f64>,
    sigma: &SpdMatrix,
    psi: &SpdMatrix,
) -> Result<f64> {
    let (p, q) = (y.nrows(), y.ncols());
    if m.nrows() != p || m.ncols() != q || sigma.dim() != p || psi.dim() != q {
        return Err(Error::DimensionMismatch(format!(
            "matnorm_logpdf: y {p}x{q}, m {}x{}, sigma {}, psi {}",
            m.nrows(),
            m.ncols(),
            sigma.dim(),
            psi.dim()
        )));
    }
    let e = y - m;
    // tr(Psi^-1 E' Sigma^-1 E) as an entrywise product of two solves.
    let sig_inv_e = sigma.chol().solve_mat(&e);
    let e_psi_inv = psi.chol().solve_mat(&e.transpose()).transpose();
    let quad = e_psi_inv.zip_fold(&sig_inv_e, 0.0, |acc, a, b| acc + a * b);
    Ok(-0.5
        * ((p * q) as f64 * (2.0 * PI).ln()
            + p as f64 * psi.log_det()
            + q as f64 * sigma.log_det()
            + quad))
}

/// P(lower < Y < upper) for Y ~ N(mu, cov).
///
/// Deterministic for a fixed seed. `tol` controls the QMC error target; the
/// evaluation budget is capped at [`DEFAULT_MAX_EVALS`].
pub fn mvn_rect_prob(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    mu: &DVector<f64>,
    cov: &SpdMatrix,
    tol: f64,
    seed: u64,
) -> Result<RectProbResult> {
    mvn_rect_prob_capped(lower, upper, mu, cov, tol, seed, DEFAULT_MAX_EVALS)
}

/// Default cap on integrand evaluations per rectangle-probability call.
pub const DEFAULT_MAX_EVALS: u64 = 1_000_000;

pub fn mvn_rect_prob_capped(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    mu: &DVector<f64>,
    cov: &SpdMatrix,
    tol: f64,
    seed: u64,
    max_evals: u64,
) -> Result<RectProbResult> {
    let d = cov.dim();
    if lower.len() != d || upper.len() != d || mu.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "mvn_rect_prob: lower {} / upper {} / mu {} / cov {}",
            lower.len(),
            upper.len(),
            mu.len(),
            d
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be > 0, got {tol}"
        )));
    }
    for i in 0..d {
        if lower[i] > upper[i] {
            return Err(Error::InvalidParameter(format!(
                "rectangle bound lower[{i}]={} > upper[{i}]={}",
                lower[i], upper[i]
            )));
        }
        if lower[i] == upper[i] {
            return Ok(finish(0.0, 0.0, 0));
        }
    }

    // Center, and keep only coordinates with at least one finite bound; the
    // rest marginalize out exactly.
    let mut a = Vec::with_capacity(d);
    let mut b = Vec::with_capacity(d);
    let mut keep = Vec::with_capacity(d);
    for i in 0..d {
        let lo = if lower[i] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lower[i] - mu[i]
        };
        let hi = if upper[i] == f64::INFINITY {
            f64::INFINITY
        } else {
            upper[i] - mu[i]
        };
        if lo > f64::NEG_INFINITY || hi < f64::INFINITY {
            keep.push(i);
            a.push(lo);
            b.push(hi);
        }
    }

    match keep.len() {
        0 => Ok(finish(1.0, 0.0, 0)),
        1 => {
            let v = cov.entry(keep[0], keep[0]);
            let sd = v.sqrt();
            let p = normal::cdf(b[0] / sd) - normal::cdf(a[0] / sd);
            Ok(finish(p, 4.0 * f64::EPSILON, 0))
        }
        2 => {
            let (i, j) = (keep[0], keep[1]);
            let (s1, s2) = (cov.entry(i, i).sqrt(), cov.entry(j, j).sqrt());
            let r = (cov.entry(i, j) / (s1 * s2)).clamp(-1.0, 1.0);
            let p = bvn_rect(a[0] / s1, b[0] / s1, a[1] / s2, b[1] / s2, r);
            Ok(finish(p, 5e-15 + 4.0 * f64::EPSILON, 0))
        }
        3 => {
            let sd: Vec<f64> = keep.iter().map(|&i| cov.entry(i, i).sqrt()).collect();
            let mut r = [0.0f64; 3]; // r12, r13, r23
            let mut idx = 0;
            for u in 0..3 {
                for v in (u + 1)..3 {
                    r[idx] = (cov.entry(keep[u], keep[v]) / (sd[u] * sd[v])).clamp(-1.0, 1.0);
                    idx += 1;
                }
            }
            let lo = [a[0] / sd[0], a[1] / sd[1], a[2] / sd[2]];
            let hi = [b[0] / sd[0], b[1] / sd[1], b[2] / sd[2]];
            let p = tvn_rect(&lo, &hi, r[0], r[1], r[2]);
            Ok(finish(p, 1e-12, 0))
        }
        k => {
            let sub = if k == d {
                cov.mat().clone()
            } else {
                crate::linalg::gather_block(cov.mat(), &keep, &keep)
            };
            let problem = SovProblem::prepare(&a, &b, &sub);
            let (p, err, evals) = problem.integrate_qmc(tol, seed, max_evals);
            Ok(finish(p, err, evals))
        }
    }
}

fn finish(p: f64, err: f64, evaluations: u64) -> RectProbResult {
    let probability = p.clamp(0.0, 1.0);
    let error_estimate = err
        .max(0.0)
        .min(probability + 1e-9)
        .min(1.0 - probability + 1e-9);
    RectProbResult {
        probability,
        error_estimate,
        evaluations,
    }
}

// ---------------------------------------------------------------------------
// Bivariate normal (Drezner-Wesolowsky with Genz's refinements)
// ---------------------------------------------------------------------------

const GAUSS_W6: [f64; 3] = [0.1713244923791705, 0.3607615730481384, 0.4679139345726904];
const GAUSS_X6: [f64; 3] = [0.9324695142031522, 0.6612093864662647, 0.2386191860831970];
const GAUSS_W12: [f64; 6] = [
    0.04717533638651177,
    0.1069393259953183,
    0.1600783285433464,
    0.2031674267230659,
    0.2334925365383547,
    0.2491470458134029,
];
const GAUSS_X12: [f64; 6] = [
    0.9815606342467191,
    0.9041172563704750,
    0.7699026741943050,
    0.5873179542866171,
    0.3678314989981802,
    0.1252334085114692,
];
const GAUSS_W20: [f64; 10] = [
    0.01761400713915212,
    0.04060142980038694,
    0.06267204833410906,
    0.08327674157670475,
    0.1019301198172404,
    0.1181945319615184,
    0.1316886384491766,
    0.1420961093183821,
    0.1491729864726037,
    0.1527533871307259,
];
const GAUSS_X20: [f64; 10] = [
    0.9931285991850949,
    0.9639719272779138,
    0.9122344282513259,
    0.8391169718222188,
    0.7463319064601508,
    0.6360536807265150,
    0.5108670019508271,
    0.3737060887154196,
    0.2277858511416451,
    0.07652652113349733,
];

/// Upper-orthant probability P(X > h, Y > k) for standard normals with
/// correlation `r`. Accurate to about 5e-16.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    debug_assert!((-1.0..=1.0).contains(&r));
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            normal::sf(k)
        };
    }
    if k == f64::NEG_INFINITY {
        return normal::sf(h);
    }
    if r == 0.0 {
        return normal::sf(h) * normal::sf(k);
    }

    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GAUSS_W6, &GAUSS_X6)
    } else if r.abs() < 0.75 {
        (&GAUSS_W12, &GAUSS_X12)
    } else {
        (&GAUSS_W20, &GAUSS_X20)
    };

    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = 0.5 * r.asin();
        for i in 0..w.len() {
            for is in [-1.0f64, 1.0] {
                let sn = (asr * (is * x[i] + 1.0)).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn * asr / (2.0 * PI) + normal::sf(h) * normal::sf(k)
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a_sq = (1.0 - r) * (1.0 + r);
            let mut a = a_sq.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -(bs / a_sq + hk) / 2.0;
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (bs - a_sq) * (1.0 - d * bs / 5.0) / 3.0
                        + c * d * a_sq * a_sq / 5.0);
            }
            if -hk < 100.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * (2.0 * PI).sqrt()
                    * normal::cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for i in 0..w.len() {
                for is in [-1.0f64, 1.0] {
                    let xs = (a * (is * x[i] + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * w[i]
                            * asr.exp()
                            * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += normal::sf(h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += normal::cdf(k) - normal::cdf(h);
            }
        }
        bvn.clamp(0.0, 1.0)
    }
}

/// Rectangle probability P(a1 < X < b1, a2 < Y < b2) for standard bivariate
/// normal with correlation `r`.
pub fn bvn_rect(a1: f64, b1: f64, a2: f64, b2: f64, r: f64) -> f64 {
    let p =
        bvn_upper(a1, a2, r) - bvn_upper(a1, b2, r) - bvn_upper(b1, a2, r) + bvn_upper(b1, b2, r);
    p.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Trivariate normal (Plackett path integral, Genz's formulation)
// ---------------------------------------------------------------------------

/// Lower CDF P(X1 < h1, X2 < h2, X3 < h3) for standard normals with
/// correlations (r12, r13, r23). Accurate to about 1e-13.
pub fn tvn_cdf(h: [f64; 3], r12: f64, r13: f64, r23: f64) -> f64 {
    if h.contains(&f64::NEG_INFINITY) {
        return 0.0;
    }
    if h[0] == f64::INFINITY {
        return bvn_lower(h[1], h[2], r23);
    }
    if h[1] == f64::INFINITY {
        return bvn_lower(h[0], h[2], r13);
    }
    if h[2] == f64::INFINITY {
        return bvn_lower(h[0], h[1], r12);
    }

    // Relabel so the fixed correlation of the path (between variables 2 and 3)
    // is the largest in absolute value: the scaled correlations shrink to 0.
    let (h, ra, rb, rc) = {
        let pairs = [(r23.abs(), 0), (r13.abs(), 1), (r12.abs(), 2)];
        let best = pairs
            .iter()
            .max_by(|x, y| x.0.partial_cmp(&y.0).unwrap())
            .unwrap()
            .1;
        match best {
            0 => (h, r12, r13, r23),
            1 => ([h[1], h[0], h[2]], r12, r23, r13),
            _ => ([h[2], h[0], h[1]], r13, r23, r12),
        }
    };
    // Now P(X1<h0, X2<h1, X3<h2) with corr(1,2)=ra, corr(1,3)=rb, corr(2,3)=rc.

    if ra.abs() + rb.abs() < 1e-14 {
        return normal::cdf(h[0]) * bvn_lower(h[1], h[2], rc);
    }
    if 1.0 - rc < 1e-14 {
        // X2 = X3 almost surely.
        return bvn_lower(
            h[0],
            h[1].min(h[2]),
            if ra.abs() < rb.abs() { rb } else { ra },
        );
    }
    if rc + 1.0 < 1e-14 {
        // X3 = -X2.
        return if h[1] > -h[2] {
            (bvn_lower(h[0], h[1], ra) - bvn_lower(h[0], -h[2], ra)).max(0.0)
        } else {
            0.0
        };
    }

    let asin_a = ra.asin();
    let asin_b = rb.asin();
    let integrand = |x: f64| {
        let mut f = 0.0;
        let s12 = (asin_a * x).sin();
        let s13 = (asin_b * x).sin();
        if asin_a.abs() > 0.0 {
            f += asin_a * plackett_point(h[0], h[1], h[2], s13, rc, s12);
        }
        if asin_b.abs() > 0.0 {
            f += asin_b * plackett_point(h[0], h[2], h[1], s12, rc, s13);
        }
        f
    };
    let correction = adaptive_kronrod(&integrand, 0.0, 1.0, 1e-14, 0) / (2.0 * PI);
    (normal::cdf(h[0]) * bvn_lower(h[1], h[2], rc) + correction).clamp(0.0, 1.0)
}

/// Plackett integrand: phi_2(ba, bb; r) * Phi(conditional limit of the third
/// variable), with the 1/sqrt(1-r^2) of the density cancelled by the sine
/// path's Jacobian.
fn plackett_point(ba: f64, bb: f64, bc: f64, ra: f64, rb: f64, r: f64) -> f64 {
    let rr = 1.0 - r * r;
    let dt = rr * (rr - (ra - rb) * (ra - rb) - 2.0 * ra * rb * (1.0 - r));
    if dt <= 0.0 {
        return 0.0;
    }
    let bt = (bc * rr + ba * (r * rb - ra) + bb * (r * ra - rb)) / dt.sqrt();
    let ft = (ba - r * bb) * (ba - r * bb) / rr + bb * bb;
    if bt > -10.0 && ft < 100.0 {
        let mut f = (-ft / 2.0).exp();
        if bt < 10.0 {
            f *= normal::cdf(bt);
        }
        f
    } else {
        0.0
    }
}

/// Lower bivariate CDF P(X < h, Y < k).
pub fn bvn_lower(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

fn adaptive_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (value, err) = kronrod15(f, a, b);
    if err <= tol || depth >= 12 {
        value
    } else {
        let mid = 0.5 * (a + b);
        adaptive_kronrod(f, a, mid, tol / 2.0, depth + 1)
            + adaptive_kronrod(f, mid, b, tol / 2.0, depth + 1)
    }
}

const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn kronrod15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = hw * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * hw, ((k - g) * hw).abs().max(1e-300))
}

/// Rectangle probability for the standard trivariate normal by
/// inclusion-exclusion over the eight corners.
pub fn tvn_rect(lower: &[f64; 3], upper: &[f64; 3], r12: f64, r13: f64, r23: f64) -> f64 {
    let mut p = 0.0;
    for mask in 0..8u32 {
        let corner = [
            if mask & 1 == 0 { upper[0] } else { lower[0] },
            if mask & 2 == 0 { upper[1] } else { lower[1] },
            if mask & 4 == 0 { upper[2] } else { lower[2] },
        ];
        let sign = if mask.count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        if corner.contains(&f64::NEG_INFINITY) {
            continue;
        }
        p += sign * tvn_cdf(corner, r12, r13, r23);
    }
    p.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Separation-of-variables QMC (Genz)
// ---------------------------------------------------------------------------

const QMC_SHIFTS: usize = 12;
const QMC_FIRST_BATCH: u64 = 64;
const PIVOT_FLOOR: f64 = 1e-100;

struct SovProblem {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    l: DMatrix<f64>,
}

impl SovProblem {
    /// Variable reordering (smallest conditional mass first) fused with the
    /// Cholesky factorization, following Genz & Bretz.
    fn prepare(a_in: &[f64], b_in: &[f64], cov: &DMatrix<f64>) -> Self {
        let d = a_in.len();
        let mut a = a_in.to_vec();
        let mut b = b_in.to_vec();
        let mut c = cov.clone();
        let mut l = DMatrix::<f64>::zeros(d, d);
        let mut y = vec![0.0f64; d];

        for j in 0..d {
            // Pick the remaining variable with the smallest conditional mass.
            let mut best = j;
            let mut best_p = f64::INFINITY;
            for i in j..d {
                let mut s2 = c[(i, i)];
                let mut t = 0.0;
                for k in 0..j {
                    s2 -= l[(i, k)] * l[(i, k)];
                    t += l[(i, k)] * y[k];
                }
                let sd = s2.max(0.0).sqrt();
                let p = if sd > 0.0 {
                    let at = if a[i] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        normal::cdf((a[i] - t) / sd)
                    };
                    let bt = if b[i] == f64::INFINITY {
                        1.0
                    } else {
                        normal::cdf((b[i] - t) / sd)
                    };
                    bt - at
                } else {
                    f64::INFINITY
                };
                if p < best_p {
                    best_p = p;
                    best = i;
                }
            }
            if best != j {
                a.swap(j, best);
                b.swap(j, best);
                c.swap_rows(j, best);
                c.swap_columns(j, best);
                l.swap_rows(j, best);
            }

            // Cholesky column j.
            let mut s2 = c[(j, j)];
            for k in 0..j {
                s2 -= l[(j, k)] * l[(j, k)];
            }
            let piv = s2.max(0.0).sqrt();
            l[(j, j)] = piv;
            if piv > PIVOT_FLOOR {
                for i in (j + 1)..d {
                    let mut s = c[(i, j)];
                    for k in 0..j {
                        s -= l[(i, k)] * l[(j, k)];
                    }
                    l[(i, j)] = s / piv;
                }
                // Conditional truncated expectation used by later pivots.
                let mut t = 0.0;
                for k in 0..j {
                    t += l[(j, k)] * y[k];
                }
                let at = if a[j] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (a[j] - t) / piv
                };
                let bt = if b[j] == f64::INFINITY {
                    f64::INFINITY
                } else {
                    (b[j] - t) / piv
                };
                let mass = normal::cdf(bt) - normal::cdf(at);
                y[j] = if mass > 1e-300 {
                    let pa = if at.is_finite() { normal::pdf(at) } else { 0.0 };
                    let pb = if bt.is_finite() { normal::pdf(bt) } else { 0.0 };
                    (pa - pb) / mass
                } else {
                    0.0
                };
            }
        }

        SovProblem {
            dim: d,
            lower: a,
            upper: b,
            l,
        }
    }

    /// Transformed integrand over the unit cube of dimension dim-1.
    fn integrand(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let mut y = vec![0.0f64; d - 1];
        let piv0 = self.l[(0, 0)].max(PIVOT_FLOOR);
        let mut dj = if self.lower[0] == f64::NEG_INFINITY {
            0.0
        } else {
            normal::cdf(self.lower[0] / piv0)
        };
        let mut ej = if self.upper[0] == f64::INFINITY {
            1.0
        } else {
            normal::cdf(self.upper[0] / piv0)
        };
        let mut f = ej - dj;
        for j in 1..d {
            let u = (dj + w[j - 1] * (ej - dj)).clamp(1e-16, 1.0 - 1e-16);
            y[j - 1] = normal::quantile(u);
            let mut t = 0.0;
            for k in 0..j {
                t += self.l[(j, k)] * y[k];
            }
            let piv = self.l[(j, j)].max(PIVOT_FLOOR);
            dj = if self.lower[j] == f64::NEG_INFINITY {
                0.0
            } else {
                normal::cdf((self.lower[j] - t) / piv)
            };
            ej = if self.upper[j] == f64::INFINITY {
                1.0
            } else {
                normal::cdf((self.upper[j] - t) / piv)
            };
            f *= ej - dj;
        }
        f
    }

    /// Randomized (shifted) Richtmyer rule with escalating sample size.
    fn integrate_qmc(&self, tol: f64, seed: u64, max_evals: u64) -> (f64, f64, u64) {
        let dw = self.dim - 1;
        let sqrt_primes: Vec<f64> = primes(dw).iter().map(|&p| (p as f64).sqrt()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts: Vec<Vec<f64>> = (0..QMC_SHIFTS)
            .map(|_| (0..dw).map(|_| rng.random::<f64>()).collect())
            .collect();

        let mut sums = [0.0f64; QMC_SHIFTS];
        let mut n_per_shift: u64 = 0;
        let mut batch = QMC_FIRST_BATCH;
        let mut point = vec![0.0f64; dw];

        loop {
            for (s, shift) in shifts.iter().enumerate() {
                for i in (n_per_shift + 1)..=(n_per_shift + batch) {
                    for k in 0..dw {
                        let v = (i as f64) * sqrt_primes[k] + shift[k];
                        point[k] = (2.0 * v.fract() - 1.0).abs();
                    }
                    sums[s] += self.integrand(&point);
                }
            }
            n_per_shift += batch;
            let evals = n_per_shift * QMC_SHIFTS as u64;

            let means: Vec<f64> = sums.iter().map(|s| s / n_per_shift as f64).collect();
            let est = means.iter().sum::<f64>() / QMC_SHIFTS as f64;
            let var = means.iter().map(|m| (m - est) * (m - est)).sum::<f64>()
                / ((QMC_SHIFTS - 1) as f64 * QMC_SHIFTS as f64);
            let err = 3.0 * var.sqrt();
            if err <= tol || evals >= max_evals {
                return (est, err.max(f64::EPSILON), evals);
            }
            batch = n_per_shift; // double the total each round
        }
    }
}

fn primes(n: usize) -> Vec<u64> {
    const TABLE: [u64; 25] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
        97,
    ];
    assert!(n <= TABLE.len(), "QMC dimension {n} too large");
    TABLE[..n].to_vec()
}

/// Convenience: vectorize a matrix-normal mean and evaluate the equivalent
/// multivariate density. Used by identity tests.
pub fn mvn_logpdf_of_matrix(
    y: &DMatrix<f64>,
    m: &DMatrix<f64>,
    kron_cov: &SpdMatrix,
) -> Result<f64> {
    mvn_logpdf(&vec_cols(y), &vec_cols(m), kron_cov)
}
