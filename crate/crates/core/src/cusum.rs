//! Page's CUSUM detector with a Gaussian likelihood-ratio model.
//!
//! `Z_0 = 0`, `Z_n = max(0, Z_{n-1} + log(f1(x_n) / f0(x_n)))`, alarm at the
//! first `n` with `Z_n >= h`. The detector freezes after its alarm; callers
//! decide whether to start a fresh one.

use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::{AlarmEvent, Detector, Error, Result};

/// Draws used to estimate `E_1[((log f1/f0)^+)^2]` at model construction.
pub const SECOND_MOMENT_SAMPLES: usize = 1_000_000;
/// Seed for that estimate, so the model is a pure function of its parameters.
pub const SECOND_MOMENT_SEED: u64 = 0x5EC0_4D00;

/// Pre- and post-change normal parameters (1-dimensional observations).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianModelSpec {
    pub mean0: f64,
    pub var0: f64,
    pub mean1: f64,
    pub var1: f64,
}

/// `d_KL(N(mean_a, var_a) || N(mean_b, var_b))`.
pub fn gaussian_kl(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64) -> f64 {
    0.5 * ((var_b / var_a).ln() + (var_a + (mean_a - mean_b).powi(2)) / var_b - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodModel {
    spec: GaussianModelSpec,
    /// `d_KL(p0, p1)`; the log-ratio has mean `-kl_pre` before the change.
    kl_pre: f64,
    /// `d_KL(p1, p0)`; the log-ratio has mean `kl_post` after the change.
    kl_post: f64,
    second_moment_post: f64,
}

impl LikelihoodModel {
    pub fn gaussian(mean0: f64, var0: f64, mean1: f64, var1: f64) -> Result<Self> {
        Self::gaussian_with(GaussianModelSpec { mean0, var0, mean1, var1 }, SECOND_MOMENT_SEED, SECOND_MOMENT_SAMPLES)
    }

    /// Like [`LikelihoodModel::gaussian`] with an explicit Monte Carlo seed
    /// and sample count for the second-moment estimate.
    pub fn gaussian_with(spec: GaussianModelSpec, seed: u64, samples: usize) -> Result<Self> {
        let GaussianModelSpec { mean0, var0, mean1, var1 } = spec;
        for (name, v) in [("var0", var0), ("var1", var1)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(mean0.is_finite() && mean1.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        if samples == 0 {
            return Err(Error::invalid("second-moment estimate needs at least one sample"));
        }
        let mut model = Self {
            spec,
            kl_pre: gaussian_kl(mean0, var0, mean1, var1),
            kl_post: gaussian_kl(mean1, var1, mean0, var0),
            second_moment_post: 0.0,
        };
        let post = Normal::new(mean1, var1.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = rng_from_seed(seed);
        let mut acc = 0.0;
        for _ in 0..samples {
            let lr = model.log_ratio(post.sample(&mut rng)).max(0.0);
            acc += lr * lr;
        }
        model.second_moment_post = acc / samples as f64;
        Ok(model)
    }

    /// `log N(x; mean1, var1) - log N(x; mean0, var0)`.
    #[inline]
    pub fn log_ratio(&self, x: f64) -> f64 {
        let s = &self.spec;
        -0.5 * (s.var1 / s.var0).ln() - (x - s.mean1).powi(2) / (2.0 * s.var1) + (x - s.mean0).powi(2) / (2.0 * s.var0)
    }

    pub fn spec(&self) -> GaussianModelSpec {
        self.spec
    }

    pub fn kl_pre(&self) -> f64 {
        self.kl_pre
    }

    pub fn kl_post(&self) -> f64 {
        self.kl_post
    }

    pub fn second_moment_post(&self) -> f64 {
        self.second_moment_post
    }
}

/// Running CUSUM state for one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Cusum {
    model: LikelihoodModel,
    h: f64,
    z: f64,
    n: u64,
    alarmed_at: Option<u64>,
}

impl Cusum {
    pub fn new(model: LikelihoodModel, h: f64) -> Result<Self> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::invalid(format!("threshold h must be finite and >= 0, got {h}")));
        }
        Ok(Self { model, h, z: 0.0, n: 0, alarmed_at: None })
    }

    /// Applies one recursion step with a precomputed log-likelihood ratio.
    pub fn advance(&mut self, log_ratio: f64) -> Result<Option<AlarmEvent>> {
        if self.alarmed_at.is_some() {
            return Err(Error::Usage("CUSUM detector already alarmed".into()));
        }
        self.z = (self.z + log_ratio).max(0.0);
        self.n += 1;
        if self.z >= self.h {
            self.alarmed_at = Some(self.n);
            return Ok(Some(AlarmEvent { time: self.n, statistic: self.z }));
        }
        Ok(None)
    }

    pub fn model(&self) -> &LikelihoodModel {
        &self.model
    }

    pub fn threshold(&self) -> f64 {
        self.h
    }
}

impl Detector for Cusum {
    fn observe(&mut self, x: &[f64]) -> Result<Option<AlarmEvent>> {
        if x.len() != 1 {
            return Err(Error::invalid(format!(
                "the Gaussian CUSUM model takes 1-dimensional observations, got {}",
                x.len()
            )));
        }
        let lr = self.model.log_ratio(x[0]);
        self.advance(lr)
    }

    fn statistic(&self) -> f64 {
        self.z
    }

    fn steps(&self) -> u64 {
        self.n
    }

    fn alarmed_at(&self) -> Option<u64> {
        self.alarmed_at
    }
}

/// Runs a fresh CUSUM over `stream` and returns its first alarm, if any.
pub fn cusum_run<I, O>(stream: I, model: &LikelihoodModel, h: f64) -> Result<Option<AlarmEvent>>
where
    I: IntoIterator<Item = O>,
    O: AsRef<[f64]>,
{
    let mut det = Cusum::new(model.clone(), h)?;
    crate::run_until_alarm(&mut det, stream)
}
