//! Scalar math shared by the exact-GeLU activation and the Gaussian policy
//! head. All of these are plain f64 functions; the tensor ops wrap them.

/// 1 / sqrt(2*pi), the normalization constant of the standard normal pdf.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// 0.5 * ln(2*pi), per-dimension constant of the Gaussian log-density.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// 0.5 * ln(2*pi*e), per-dimension entropy of a unit Gaussian.
pub const HALF_LN_2PIE: f64 = 1.418_938_533_204_672_7;

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal probability density function.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact Gaussian-error linear unit: `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * norm_cdf(x)
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    norm_cdf(x) + x * norm_pdf(x)
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
