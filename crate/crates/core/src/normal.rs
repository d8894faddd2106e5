//! Standard normal helpers.

use libm::erfc;
use statrs::function::erf::erfc_inv;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Inverse of `cdf` on (0, 1); returns the infinities at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        // one Newton step polishes the inverse-erfc seed
        let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
        let density = pdf(x);
        if density > 0.0 {
            x - (cdf(x) - p) / density
        } else {
            x
        }
    }
}
