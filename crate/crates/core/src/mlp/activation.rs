use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, `Φ(z) = (1 + erf(z/√2)) / 2`.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Gaussian error linear unit `z·Φ(z)`.
#[inline]
pub fn gelu(z: f64) -> f64 {
    z * std_normal_cdf(z)
}

/// `d/dz gelu(z) = Φ(z) + z·φ(z)`.
#[inline]
pub fn gelu_derivative(z: f64) -> f64 {
    std_normal_cdf(z) + z * std_normal_pdf(z)
}
