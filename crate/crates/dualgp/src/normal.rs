//! Standard normal density, distribution and the inverse Mills ratio.
//!
//! The probit likelihood needs `phi(z) / Phi(z)` far into the lower tail where
//! `Phi` underflows, so below [`TAIL_SWITCH`] everything is routed through a
//! continued fraction for the Mills ratio instead of dividing tiny numbers.

use libm::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAIL_SWITCH: f64 = -5.0;

#[inline]
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[inline]
pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Mills ratio `R(x) = (1 - Phi(x)) / phi(x)` for `x >= 5`, by backward
/// evaluation of the Laplace continued fraction.
fn mills_ratio_upper(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=60).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

pub fn ln_cdf(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        ln_pdf(z) + mills_ratio_upper(-z).ln()
    } else {
        cdf(z).ln()
    }
}

/// `phi(z) / Phi(z)`, finite for every finite `z`.
pub fn inv_mills(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        1.0 / mills_ratio_upper(-z)
    } else {
        pdf(z) / cdf(z)
    }
}
