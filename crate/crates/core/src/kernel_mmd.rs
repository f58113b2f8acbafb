//! Kernels and maximum mean discrepancy (MMD) estimators.
//!
//! The linear-time statistic [`p_l`] is built from disjoint blocks of four
//! samples scored by [`g`]. KCUSUM feeds the same block score, shifted by a
//! drift, into its recursion. [`mmd_sq_quadratic`] is the O(n²) plug-in
//! V-statistic and serves as a reference value for the linear estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A bounded, symmetric, positive-definite similarity on `R^d`.
pub trait Kernel: Send + Sync {
    fn dimension(&self) -> usize;

    /// `||k||_inf`: an upper bound on `|k(x, y)|` over all inputs.
    fn sup_bound(&self) -> f64;

    /// Evaluates the kernel without checking dimensions.
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64;

    fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dimension(), x)?;
        check_dim(self.dimension(), y)?;
        Ok(self.eval_unchecked(x, y))
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::invalid(format!("dimension mismatch: expected {expected}, got {}", x.len())));
    }
    Ok(())
}

#[inline]
fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `k(x, y) = amplitude * exp(-||x - y||^2 / (2 * bandwidth^2))`.
///
/// The defaults (`bandwidth = 1`, `amplitude = 1`) give the plain Gaussian
/// kernel `exp(-||x - y||^2 / 2)`. The amplitude is the sup-norm of the
/// kernel, which is what the KCUSUM bounds are stated in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    dimension: usize,
    bandwidth: f64,
    amplitude: f64,
}

impl GaussianKernel {
    pub fn new(dimension: usize) -> Result<Self> {
        Self::scaled(dimension, 1.0, 1.0)
    }

    pub fn with_bandwidth(dimension: usize, bandwidth: f64) -> Result<Self> {
        Self::scaled(dimension, bandwidth, 1.0)
    }

    pub fn scaled(dimension: usize, bandwidth: f64, amplitude: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("kernel dimension must be positive"));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be finite and > 0, got {bandwidth}")));
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::invalid(format!("amplitude must be finite and > 0, got {amplitude}")));
        }
        Ok(Self { dimension, bandwidth, amplitude })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl Kernel for GaussianKernel {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn sup_bound(&self) -> f64 {
        self.amplitude
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = 2.0 * self.bandwidth * self.bandwidth;
        self.amplitude * (-squared_distance(x, y) / s).exp()
    }
}

/// The unit-bandwidth Gaussian kernel `exp(-||x - y||^2 / 2)` on vectors of
/// any (matching) dimension.
pub fn gaussian_kernel(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
    }
    Ok((-squared_distance(x, y) / 2.0).exp())
}

/// Two consecutive stream samples and two reference samples.
#[derive(Clone, Copy, Debug)]
pub struct PairBlock<'a> {
    pub x0: &'a [f64],
    pub x1: &'a [f64],
    pub y0: &'a [f64],
    pub y1: &'a [f64],
}

impl<'a> PairBlock<'a> {
    pub fn new(x0: &'a [f64], x1: &'a [f64], y0: &'a [f64], y1: &'a [f64]) -> Self {
        Self { x0, x1, y0, y1 }
    }

    fn check(&self, dim: usize) -> Result<()> {
        for v in [self.x0, self.x1, self.y0, self.y1] {
            check_dim(dim, v)?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn g_unchecked<K: Kernel + ?Sized>(kernel: &K, b: &PairBlock<'_>) -> f64 {
    kernel.eval_unchecked(b.x0, b.x1) + kernel.eval_unchecked(b.y0, b.y1)
        - kernel.eval_unchecked(b.x0, b.y1)
        - kernel.eval_unchecked(b.x1, b.y0)
}

/// Block score `k(x0,x1) + k(y0,y1) - k(x0,y1) - k(x1,y0)`.
///
/// Its expectation over independent blocks with the x-pair from `p` and the
/// y-pair from `q` is the squared MMD `d_k(p, q)^2`.
pub fn g<K: Kernel + ?Sized>(block: &PairBlock<'_>, kernel: &K) -> Result<f64> {
    block.check(kernel.dimension())?;
    Ok(g_unchecked(kernel, block))
}

/// Drift-shifted block score `g(block) - delta`.
pub fn g_delta<K: Kernel + ?Sized>(block: &PairBlock<'_>, kernel: &K, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(g(block, kernel)? - delta)
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be finite and >= 0, got {delta}")));
    }
    Ok(())
}

/// Linear-time unbiased estimate of `d_k^2`: the mean of `g` over the
/// disjoint blocks `((x_{2i-1}, x_{2i}), (y_{2i-1}, y_{2i}))`.
///
/// Odd or mismatched lengths are rejected; dropping the last sample would
/// bias the estimate.
pub fn p_l<K, O>(xs: &[O], ys: &[O], kernel: &K) -> Result<f64>
where
    K: Kernel + ?Sized,
    O: AsRef<[f64]>,
{
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::invalid(format!("sequence lengths differ: {} vs {}", n, ys.len())));
    }
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("sequence length must be even and >= 2, got {n}")));
    }
    let mut sum = 0.0;
    for (xp, yp) in xs.chunks_exact(2).zip(ys.chunks_exact(2)) {
        let block = PairBlock::new(xp[0].as_ref(), xp[1].as_ref(), yp[0].as_ref(), yp[1].as_ref());
        sum += g(&block, kernel)?;
    }
    Ok(sum / (n / 2) as f64)
}

fn mean_gram<K, O>(a: &[O], b: &[O], kernel: &K) -> f64
where
    K: Kernel + ?Sized,
    O: AsRef<[f64]> + Sync,
{
    // Row sums are reduced in index order so the result does not depend on
    // the thread count.
    let rows: Vec<f64> =
        a.par_iter().map(|x| b.iter().map(|y| kernel.eval_unchecked(x.as_ref(), y.as_ref())).sum::<f64>()).collect();
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Quadratic-time plug-in (biased V-statistic) estimate of `d_k^2`:
/// `mean k(x_i, x_j) + mean k(y_i, y_j) - 2 mean k(x_i, y_j)`, diagonal terms
/// included.
///
/// The bias is `O(1/n)` and positive; the raw value is returned, so small
/// negative values are possible only through rounding.
pub fn mmd_sq_quadratic<K, O>(xs: &[O], ys: &[O], kernel: &K) -> Result<f64>
where
    K: Kernel + ?Sized,
    O: AsRef<[f64]> + Sync,
{
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::invalid("mmd_sq_quadratic needs non-empty samples"));
    }
    for v in xs.iter().chain(ys) {
        check_dim(kernel.dimension(), v.as_ref())?;
    }
    Ok(mean_gram(xs, xs, kernel) + mean_gram(ys, ys, kernel) - 2.0 * mean_gram(xs, ys, kernel))
}
