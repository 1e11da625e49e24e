//! Scalar math that works without `std`; with it, the platform routines are used.

#[inline]
pub fn exp(x: f64) -> f64 {
    #[cfg(feature = "std")]
    return x.exp();
    #[cfg(not(feature = "std"))]
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    #[cfg(feature = "std")]
    return x.ln();
    #[cfg(not(feature = "std"))]
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    #[cfg(feature = "std")]
    return x.ln_1p();
    #[cfg(not(feature = "std"))]
    libm::log1p(x)
}

#[inline]
pub fn exp_m1(x: f64) -> f64 {
    #[cfg(feature = "std")]
    return x.exp_m1();
    #[cfg(not(feature = "std"))]
    libm::expm1(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    #[cfg(feature = "std")]
    return x.sqrt();
    #[cfg(not(feature = "std"))]
    libm::sqrt(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    #[cfg(feature = "std")]
    return x.cos();
    #[cfg(not(feature = "std"))]
    libm::cos(x)
}

/// `ln(1 + e^x)`, linear above 30 where the correction is below f64 resolution.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + exp(-x)
    } else {
        ln_1p(exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        exp_m1(x)
    }
}

/// Smallest argument used when a logarithm of a probability underflows.
pub const TINY: f64 = f64::MIN_POSITIVE;

/// `p ln p` with the continuous extension `0 ln 0 = 0`.
#[inline]
pub fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * ln(p)
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = exp(*x - max);
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}
