//! Thin wrappers over `libm` so call sites read like `std`.

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
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[inline]
pub fn cosh(x: f64) -> f64 {
    libm::cosh(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Maximum of a slice, `-inf` when empty.
pub fn max(xs: &[f64]) -> f64 {
    xs.iter().fold(f64::NEG_INFINITY, |a, &b| if b > a { b } else { a })
}

/// Minimum of a slice, `+inf` when empty.
pub fn min(xs: &[f64]) -> f64 {
    xs.iter().fold(f64::INFINITY, |a, &b| if b < a { b } else { a })
}

/// Largest absolute value of a slice.
pub fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |a, &b| if abs(b) > a { abs(b) } else { a })
}
