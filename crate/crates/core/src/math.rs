//! Scalar elementary functions.
//!
//! Everything routes through `libm` so results do not depend on the platform
//! C library, with or without `std`.

pub use core::f64::consts::{LN_2, PI, SQRT_2};

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// `ln(cosh(x))`, stable for large `|x|`.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + libm::log1p(libm::exp(-2.0 * a)) - LN_2
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cosh_matches_naive_form_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.25;
            let naive = libm::log(libm::cosh(x));
            assert!((log_cosh(x) - naive).abs() < 1e-13, "x = {x}");
        }
        assert_eq!(log_cosh(0.0), 0.0);
        assert!((log_cosh(800.0) - (800.0 - LN_2)).abs() < 1e-9);
    }
}
