//! Float helpers that work without `std`.

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Fractional part in `[0, 1)`.
#[inline]
pub fn fract(x: f64) -> f64 {
    x - floor(x)
}

/// `a <= b` up to an absolute tolerance.
#[inline]
pub fn le_tol(a: f64, b: f64, tol: f64) -> bool {
    a <= b + tol
}
