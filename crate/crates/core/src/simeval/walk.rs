//! Random-walk simulations behind the run-length and delay bounds.

use rand_distr::{Distribution as _, Normal, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use super::mean_se;
use crate::data::Distribution;
use crate::kernel_mmd::{g_delta, Kernel, PairBlock};
use crate::rng::{derive_seed, rng_from_seed, tag, SimRng};
use crate::{Error, Result};

/// Law of the i.i.d. increments of a walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Increment {
    Gaussian { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

enum Sampler {
    Gaussian(Normal<f64>),
    Uniform(Uniform<f64>),
}

impl Sampler {
    fn sample(&self, rng: &mut SimRng) -> f64 {
        match self {
            Sampler::Gaussian(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
        }
    }
}

impl Increment {
    pub fn mean(&self) -> f64 {
        match *self {
            Increment::Gaussian { mean, .. } => mean,
            Increment::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        if let Increment::Gaussian { sd, .. } = *self {
            if !(sd.is_finite() && sd > 0.0) {
                return Err(Error::invalid(format!("gaussian increment sd must be finite and > 0, got {sd}")));
            }
        }
        match *self {
            Increment::Gaussian { mean, sd } => Normal::new(mean, sd)
                .map(Sampler::Gaussian)
                .map_err(|e| Error::invalid(format!("gaussian increment: {e}"))),
            Increment::Uniform { low, high } => Uniform::new(low, high)
                .map(Sampler::Uniform)
                .map_err(|e| Error::invalid(format!("uniform increment: {e}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitEstimate {
    pub mean_exit_time: f64,
    pub se: f64,
    /// Fraction of walks that left through the lower boundary.
    pub lower_exit_fraction: f64,
    /// Walks still inside after `max_steps`; they count as `max_steps`.
    pub censored: usize,
}

/// First exit time of `S_n` from `[a, b]`, `S_0 = 0`.
pub fn simulate_exit_time(
    increment: Increment,
    a: f64,
    b: f64,
    trials: usize,
    max_steps: u64,
    seed: u64,
) -> Result<ExitEstimate> {
    if !(a < 0.0 && b > 0.0) {
        return Err(Error::invalid("exit interval must satisfy a < 0 < b"));
    }
    if trials == 0 || max_steps == 0 {
        return Err(Error::invalid("trials and max_steps must be >= 1"));
    }
    let sampler = increment.sampler()?;
    let runs: Vec<(u64, Option<bool>)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, tag::WALK, i));
            let mut s = 0.0;
            for n in 1..=max_steps {
                s += sampler.sample(&mut rng);
                if s < a {
                    return (n, Some(true));
                }
                if s > b {
                    return (n, Some(false));
                }
            }
            (max_steps, None)
        })
        .collect();
    let times: Vec<f64> = runs.iter().map(|r| r.0 as f64).collect();
    let (mean_exit_time, se) = mean_se(&times);
    let lower = runs.iter().filter(|r| r.1 == Some(true)).count();
    Ok(ExitEstimate {
        mean_exit_time,
        se,
        lower_exit_fraction: lower as f64 / trials as f64,
        censored: runs.iter().filter(|r| r.1.is_none()).count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossingEstimate {
    pub h: f64,
    /// Fraction of walks with `max_{n <= horizon} S_n > h`.
    pub frequency: f64,
    pub se: f64,
}

/// Empirical `P(sup_n S_n > h)` for each level, with the supremum taken
/// over the first `horizon` steps. All levels share the same walks.
pub fn simulate_sup_crossing(
    increment: Increment,
    levels: &[f64],
    horizon: u64,
    trials: usize,
    seed: u64,
) -> Result<Vec<CrossingEstimate>> {
    if trials == 0 || horizon == 0 {
        return Err(Error::invalid("trials and horizon must be >= 1"));
    }
    let sampler = increment.sampler()?;
    let maxima: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, tag::WALK, i));
            let mut s = 0.0;
            let mut best = f64::NEG_INFINITY;
            for _ in 0..horizon {
                s += sampler.sample(&mut rng);
                best = best.max(s);
            }
            best
        })
        .collect();
    let n = trials as f64;
    Ok(levels
        .iter()
        .map(|&h| {
            let p = maxima.iter().filter(|&&m| m > h).count() as f64 / n;
            CrossingEstimate { h, frequency: p, se: (p * (1.0 - p) / n).sqrt() }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C1Estimate {
    /// Fraction of runs whose block sum exceeded `h` within `max_blocks`.
    pub crossing_fraction: f64,
    pub se: f64,
    /// Mean crossing block index over runs that crossed.
    pub mean_crossing_blocks: Option<f64>,
    pub mean_crossing_se: Option<f64>,
    pub crossing_blocks: Vec<Option<u64>>,
}

/// Simulates the first block index at which `sum_j (g_j - delta)` exceeds
/// `h`, with `x` drawn from `post` and `y` from `pre` in every block.
#[allow(clippy::too_many_arguments)]
pub fn simulate_c1<K: Kernel>(
    kernel: &K,
    delta: f64,
    pre: &Distribution,
    post: &Distribution,
    h: f64,
    trials: usize,
    max_blocks: u64,
    seed: u64,
) -> Result<C1Estimate> {
    if trials == 0 || max_blocks == 0 {
        return Err(Error::invalid("trials and max_blocks must be >= 1"));
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::invalid(format!("threshold must be finite and >= 0, got {h}")));
    }
    let d = kernel.dimension();
    if pre.dimension() != d || post.dimension() != d {
        return Err(Error::invalid("distribution and kernel dimensions differ"));
    }
    let crossing_blocks: Vec<Option<u64>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<u64>> {
            let mut rng = rng_from_seed(derive_seed(seed, tag::BLOCKS, i));
            let mut buf = vec![0.0; 4 * d];
            let mut s = 0.0;
            for k in 1..=max_blocks {
                let (x, y) = buf.split_at_mut(2 * d);
                let (x0, x1) = x.split_at_mut(d);
                let (y0, y1) = y.split_at_mut(d);
                post.sample_into(&mut rng, x0);
                post.sample_into(&mut rng, x1);
                pre.sample_into(&mut rng, y0);
                pre.sample_into(&mut rng, y1);
                s += g_delta(&PairBlock::new(x0, x1, y0, y1), kernel, delta)?;
                if s > h {
                    return Ok(Some(k));
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    let crossed: Vec<f64> = crossing_blocks.iter().flatten().map(|&k| k as f64).collect();
    let p = crossed.len() as f64 / trials as f64;
    let (m, se) = mean_se(&crossed);
    let any = !crossed.is_empty();
    Ok(C1Estimate {
        crossing_fraction: p,
        se: (p * (1.0 - p) / trials as f64).sqrt(),
        mean_crossing_blocks: any.then_some(m),
        mean_crossing_se: any.then_some(se),
        crossing_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_mmd::GaussianKernel;

    #[test]
    fn exit_time_of_deterministic_walk() {
        // Uniform on a tiny interval around 1 exits [-5, 3.5] at step 4.
        let inc = Increment::Uniform { low: 0.999, high: 1.001 };
        let e = simulate_exit_time(inc, -5.0, 3.5, 100, 1000, 1).unwrap();
        assert_eq!(e.mean_exit_time, 4.0);
        assert_eq!(e.se, 0.0);
        assert_eq!(e.lower_exit_fraction, 0.0);
        assert_eq!(e.censored, 0);
    }

    #[test]
    fn invalid_walk_inputs() {
        let inc = Increment::Gaussian { mean: 0.0, sd: 1.0 };
        assert!(simulate_exit_time(inc, 1.0, 2.0, 10, 10, 0).is_err());
        assert!(simulate_exit_time(inc, -1.0, 2.0, 0, 10, 0).is_err());
        assert!(simulate_sup_crossing(Increment::Gaussian { mean: 0.0, sd: -1.0 }, &[1.0], 10, 10, 0).is_err());
        assert!(simulate_sup_crossing(Increment::Uniform { low: 1.0, high: 0.0 }, &[1.0], 10, 10, 0).is_err());
    }

    #[test]
    fn crossing_frequencies_decrease_in_h() {
        let inc = Increment::Gaussian { mean: -0.5, sd: 1.0 };
        let est = simulate_sup_crossing(inc, &[0.5, 1.0, 2.0, 4.0], 200, 5000, 9).unwrap();
        assert!(est.windows(2).all(|w| w[0].frequency >= w[1].frequency));
    }

    #[test]
    fn c1_without_change_rarely_crosses_high_threshold() {
        let k = GaussianKernel::new(1).unwrap();
        let p = Distribution::iso_normal(1, 0.0, 1.0).unwrap();
        let est = simulate_c1(&k, 0.5, &p, &p, 20.0, 200, 2000, 3).unwrap();
        assert_eq!(est.crossing_blocks.len(), 200);
        assert!(est.crossing_fraction < 0.01);
    }

    #[test]
    fn c1_with_change_always_crosses() {
        let k = GaussianKernel::new(1).unwrap();
        let pre = Distribution::iso_normal(1, 0.0, 1.0).unwrap();
        let post = Distribution::iso_normal(1, 3.0, 1.0).unwrap();
        let est = simulate_c1(&k, 0.05, &pre, &post, 5.0, 200, 10_000, 3).unwrap();
        assert_eq!(est.crossing_fraction, 1.0);
        assert!(est.mean_crossing_blocks.unwrap() > 1.0);
    }
}
