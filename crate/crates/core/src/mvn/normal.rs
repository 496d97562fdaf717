//! Scalar normal, chi-square and F distribution helpers.

use statrs::function::{beta, erf, gamma};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of Φ on the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile probability must lie in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    // polish against the CDF with Halley steps
    for _ in 0..2 {
        let pdf = std_normal_pdf(x);
        if pdf <= 0.0 {
            break;
        }
        let e = if p < 0.5 { std_normal_cdf(x) - p } else { (1.0 - p) - std_normal_cdf(-x) };
        let u = e / pdf;
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Upper-tail probability of a chi-square with `nu` (possibly fractional)
/// degrees of freedom.
pub fn chi2_survival(x: f64, nu: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    gamma::gamma_ur(0.5 * nu, 0.5 * x).clamp(0.0, 1.0)
}

/// Upper-tail probability of an F(d1, d2) variable.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f == f64::INFINITY {
        return 0.0;
    }
    let x = d2 / (d2 + d1 * f);
    beta::beta_reg(0.5 * d2, 0.5 * d1, x).clamp(0.0, 1.0)
}

pub(crate) const TWO_PI: f64 = 2.0 * PI;
