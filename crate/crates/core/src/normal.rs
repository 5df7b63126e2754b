//! Scalar Gaussian kernels: pdf, cdf, quantile, inverse Mills ratio, and the
//! univariate truncated-normal moments used as the base case of the moment
//! reductions.

use std::f64::consts::PI;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal log-density.
#[inline]
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Standard normal cdf via the complementary error function.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail P(X > x).
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Log of the standard normal cdf, stable in the far left tail.
pub fn log_cdf(x: f64) -> f64 {
    if x > -37.0 {
        cdf(x).ln()
    } else {
        // log Phi(x) ~ log phi(x) - log(-x) + log(1 - 1/x^2 + 3/x^4)
        let t = -x;
        log_pdf(x) - t.ln() + (1.0 - 1.0 / (t * t) + 3.0 / (t * t * t * t)).ln()
    }
}

/// Inverse Mills ratio lambda(a) = phi(a) / Phi(a), stable for a -> -inf.
pub fn inv_mills(a: f64) -> f64 {
    if a == f64::INFINITY {
        return 0.0;
    }
    if a > -37.0 {
        let c = cdf(a);
        if c > 0.0 {
            return pdf(a) / c;
        }
    }
    // Asymptotic expansion for the far left tail.
    let t = -a;
    t + 1.0 / t - 2.0 / (t * t * t)
}

/// Standard normal quantile (Wichura's AS 241, double precision).
pub fn quantile(p: f64) -> f64 {
    assert!(
        (0.0..=1.0).contains(&p),
        "quantile needs p in [0,1], got {p}"
    );
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A_NEAR, r) / poly(&B_NEAR, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C_MID, r) / poly(&D_MID, r)
    } else {
        let r = r - 5.0;
        poly(&E_FAR, r) / poly(&F_FAR, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
fn poly(coef: &[f64; 8], r: f64) -> f64 {
    // Horner in descending order; coef[0] is the constant term.
    let mut acc = coef[7];
    for c in coef[..7].iter().rev() {
        acc = acc * r + c;
    }
    acc
}

const A_NEAR: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B_NEAR: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C_MID: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D_MID: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E_FAR: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F_FAR: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Mean and variance of N(mu, var) truncated to (lo, hi).
///
/// Infinite bounds are allowed; returns `None` when the interval mass
/// underflows to zero.
pub fn truncated_moments_1d(mu: f64, var: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    debug_assert!(var > 0.0);
    let sd = var.sqrt();
    let a = if lo == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        (lo - mu) / sd
    };
    let b = if hi == f64::INFINITY {
        f64::INFINITY
    } else {
        (hi - mu) / sd
    };
    // One-sided cases get the Mills-ratio form, which stays accurate far in
    // the tails where Phi(b) - Phi(a) loses all precision.
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Some((mu, var));
    }
    if a == f64::NEG_INFINITY {
        let lam = inv_mills(b); // E[Z | Z < b] = -lambda(b)
        let m = -lam;
        let v = 1.0 - lam * (lam + b);
        return Some((mu + sd * m, var * v.max(0.0)));
    }
    if b == f64::INFINITY {
        let lam = inv_mills(-a); // E[Z | Z > a] = lambda(-a)
        let m = lam;
        let v = 1.0 - lam * (lam - a);
        return Some((mu + sd * m, var * v.max(0.0)));
    }
    let z = cdf(b) - cdf(a);
    if !(z > 0.0) {
        return None;
    }
    let pa = pdf(a);
    let pb = pdf(b);
    let m = (pa - pb) / z;
    let v = 1.0 + (a * pa - b * pb) / z - m * m;
    Some((mu + sd * m, var * v.max(0.0)))
}

/// Mass of N(mu, var) on (lo, hi); exact up to erfc accuracy.
pub fn truncated_mass_1d(mu: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let sd = var.sqrt();
    let a = if lo == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        (lo - mu) / sd
    };
    let b = if hi == f64::INFINITY {
        f64::INFINITY
    } else {
        (hi - mu) / sd
    };
    (cdf(b) - cdf(a)).clamp(0.0, 1.0)
}
