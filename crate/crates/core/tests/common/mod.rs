#![allow(dead_code)]

use kcusum::data::Distribution;
use kcusum::kernel_mmd::GaussianKernel;

/// Closed-form squared MMD between N(m1, v1) and N(m2, v2) on the line under
/// `a * exp(-(x - y)^2 / (2 s^2))`.
///
/// Uses `E exp(-(x - y)^2 / (2 s^2)) = s / sqrt(s^2 + w) * exp(-D^2 / (2 (s^2 + w)))`
/// for `x - y ~ N(D, w)`.
pub fn gaussian_mmd_sq(m1: f64, v1: f64, m2: f64, v2: f64, s: f64, a: f64) -> f64 {
    let e = |d: f64, w: f64| s / (s * s + w).sqrt() * (-d * d / (2.0 * (s * s + w))).exp();
    a * (e(0.0, 2.0 * v1) + e(0.0, 2.0 * v2) - 2.0 * e(m1 - m2, v1 + v2))
}

/// Mean shift `mu` with `MMD^2(N(0,1), N(mu,1)) = 1/6` under the unit-bandwidth
/// kernel of amplitude 1/2: `(1 - exp(-mu^2 / 6)) / sqrt(3) = 1/6`.
pub fn sixth_shift() -> f64 {
    (-6.0 * (1.0 - 3f64.sqrt() / 6.0).ln()).sqrt()
}

/// Kernel with sup norm 1/2 used for the synthetic bound checks.
pub fn half_kernel() -> GaussianKernel {
    GaussianKernel::scaled(1, 1.0, 0.5).unwrap()
}

pub fn normal(mean: f64, var: f64) -> Distribution {
    Distribution::iso_normal(1, mean, var).unwrap()
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn closed_form_reference_values() {
    let d = gaussian_mmd_sq(0.0, 1.0, 0.0, 4.0, 1.0, 1.0);
    assert!((d - (1.0 / 3f64.sqrt() + 1.0 / 3.0 - 2.0 / 6f64.sqrt())).abs() < 1e-15);
    let mu = sixth_shift();
    assert!((gaussian_mmd_sq(0.0, 1.0, mu, 1.0, 1.0, 0.5) - 1.0 / 6.0).abs() < 1e-14);
}
