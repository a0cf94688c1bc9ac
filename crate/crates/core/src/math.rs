//! Scalar helpers shared by the likelihood code paths.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

/// Probability floor applied to every likelihood (2^-16).
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Mass of the unit-width bin centred at `s` under a zero-mean Gaussian of
/// scale `st`. Evaluated on the lower tail for accuracy.
#[inline]
pub fn bin_prob(s: f64, st: f64) -> f64 {
    let a = s.abs();
    normal_cdf((0.5 - a) / st) - normal_cdf((-0.5 - a) / st)
}

/// `(p, dp/ds, dp/dst)` for [`bin_prob`].
#[inline]
pub fn bin_prob_grad(s: f64, st: f64) -> (f64, f64, f64) {
    let a = s.abs();
    let hi = (0.5 - a) / st;
    let lo = (-0.5 - a) / st;
    let p = normal_cdf(hi) - normal_cdf(lo);
    let (phi_hi, phi_lo) = (normal_pdf(hi), normal_pdf(lo));
    let dp_da = (phi_lo - phi_hi) / st;
    let dp_ds = if s < 0.0 { -dp_da } else { dp_da };
    let dp_dst = (lo * phi_lo - hi * phi_hi) / st;
    (p, dp_ds, dp_dst)
}

/// Bits for a bin of mass `p`, floored at [`PROB_FLOOR`].
#[inline]
pub fn bits_of(p: f64) -> f64 {
    -(p.max(PROB_FLOOR)).log2()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn inv_ln2() -> f64 {
    1.0 / LN_2
}
