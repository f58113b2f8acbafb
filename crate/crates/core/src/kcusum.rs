//! Kernel CUSUM.
//!
//! Each incoming sample `x_n` is paired with a reference draw `y_n`. On odd
//! steps the pair is buffered and the statistic is left alone. On even steps
//! the buffered and current pairs form a block and
//!
//! ```text
//! v_n = k(x_{n-1}, x_n) + k(y_{n-1}, y_n) - k(x_n, y_{n-1}) - k(x_{n-1}, y_n) - delta
//! Z_n = max(0, Z_{n-1} + v_n)
//! ```
//!
//! with an alarm at the first even `n` where `Z_n >= h`. Before a change
//! `E[v_n] = -delta`; after it `E[v_n] = d_k(p1, p2)^2 - delta`, so changes
//! at MMD distance above `sqrt(delta)` are eventually detected.

use std::sync::Arc;

use rand::Rng;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::data::Distribution;
use crate::kernel_mmd::{check_delta, check_dim, g_unchecked, GaussianKernel, Kernel, PairBlock};
use crate::rng::{derive_seed, rng_from_seed, tag, SimRng};
use crate::{AlarmEvent, Detector, Error, Observation, Result};

/// Default number of post-alarm observations used to rebuild the reference.
pub const DEFAULT_RESET_POOL_SIZE: usize = 64;

/// Finite sample of the pre-change regime, drawn from with replacement.
///
/// The samples are immutable and shared between clones; `seed` fixes the
/// sequence of draws a detector makes from the pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePool {
    samples: Arc<[f64]>,
    dimension: usize,
    seed: u64,
}

impl ReferencePool {
    pub fn new(samples: Vec<Observation>, seed: u64) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("reference pool must not be empty"))?;
        let dimension = first.len();
        if dimension == 0 {
            return Err(Error::invalid("reference observations must have dimension >= 1"));
        }
        let mut flat = Vec::with_capacity(samples.len() * dimension);
        for (i, s) in samples.iter().enumerate() {
            if s.len() != dimension {
                return Err(Error::invalid(format!(
                    "reference sample {i} has dimension {}, expected {dimension}",
                    s.len()
                )));
            }
            flat.extend_from_slice(s);
        }
        Ok(Self { samples: flat.into(), dimension, seed })
    }

    /// Draws `size` samples from `dist` using `sample_seed`; the pool's own
    /// draw sequence is fixed by `seed`.
    pub fn from_distribution(dist: &Distribution, size: usize, sample_seed: u64, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("reference pool size must be >= 1"));
        }
        let mut rng = rng_from_seed(sample_seed);
        let dimension = dist.dimension();
        let mut flat = vec![0.0; size * dimension];
        for chunk in flat.chunks_exact_mut(dimension) {
            dist.sample_into(&mut rng, chunk);
        }
        Ok(Self { samples: flat.into(), dimension, seed })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Same samples, different draw sequence.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { samples: Arc::clone(&self.samples), dimension: self.dimension, seed }
    }

    /// Draw sequence over this pool starting from its seed.
    pub fn sampler(&self) -> PoolSampler {
        PoolSampler { pool: self.clone(), rng: rng_from_seed(self.seed) }
    }
}

impl Serialize for ReferencePool {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ReferencePool", 3)?;
        st.serialize_field("rows", &self.len())?;
        st.serialize_field("dimension", &self.dimension)?;
        st.serialize_field("seed", &self.seed)?;
        st.end()
    }
}

/// Uniform draws with replacement from a [`ReferencePool`].
#[derive(Clone, Debug)]
pub struct PoolSampler {
    pool: ReferencePool,
    rng: SimRng,
}

impl PoolSampler {
    pub fn next_index(&mut self) -> usize {
        self.rng.random_range(0..self.pool.len())
    }

    pub fn draw(&mut self) -> &[f64] {
        let i = self.next_index();
        self.pool.get(i)
    }

    pub fn pool(&self) -> &ReferencePool {
        &self.pool
    }
}

/// Kernel CUSUM state for one stream.
#[derive(Clone, Debug)]
pub struct Kcusum<K = GaussianKernel> {
    kernel: K,
    sampler: PoolSampler,
    h: f64,
    delta: f64,
    z: f64,
    n: u64,
    pending_x: Vec<f64>,
    pending_y: Vec<f64>,
    pending: bool,
    last_increment: Option<f64>,
    alarmed_at: Option<u64>,
}

impl<K: Kernel + Clone> Kcusum<K> {
    /// Fresh detector with `Z = 0` and nothing buffered.
    ///
    /// `delta >= 2 ||k||_inf` is accepted with a warning: the bounds assume
    /// a smaller drift, and from `4 ||k||_inf` on no change can be detected.
    pub fn new(h: f64, delta: f64, kernel: K, pool: ReferencePool) -> Result<Self> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::invalid(format!("threshold h must be finite and >= 0, got {h}")));
        }
        check_delta(delta)?;
        if pool.is_empty() {
            return Err(Error::invalid("reference pool must not be empty"));
        }
        if pool.dimension() != kernel.dimension() {
            return Err(Error::invalid(format!(
                "reference dimension {} does not match kernel dimension {}",
                pool.dimension(),
                kernel.dimension()
            )));
        }
        let sup = kernel.sup_bound();
        if delta >= 4.0 * sup {
            log::warn!("delta {delta} >= 4*||k||_inf = {}: the detector can never alarm for h > 0", 4.0 * sup);
        } else if delta >= 2.0 * sup {
            log::warn!("delta {delta} >= 2*||k||_inf = {}: outside the range the bounds assume", 2.0 * sup);
        }
        let d = kernel.dimension();
        Ok(Self {
            kernel,
            sampler: pool.sampler(),
            h,
            delta,
            z: 0.0,
            n: 0,
            pending_x: vec![0.0; d],
            pending_y: vec![0.0; d],
            pending: false,
            last_increment: None,
            alarmed_at: None,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.h
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn pool(&self) -> &ReferencePool {
        self.sampler.pool()
    }

    /// `v_n` of the most recent even step; `None` after an odd step.
    pub fn last_increment(&self) -> Option<f64> {
        self.last_increment
    }

    /// Buffered `(x_{n-1}, y_{n-1})` after an odd step.
    pub fn pending(&self) -> Option<(&[f64], &[f64])> {
        self.pending.then_some((self.pending_x.as_slice(), self.pending_y.as_slice()))
    }
}

impl<K: Kernel + Clone> Detector for Kcusum<K> {
    fn observe(&mut self, x: &[f64]) -> Result<Option<AlarmEvent>> {
        if self.alarmed_at.is_some() {
            return Err(Error::Usage("KCUSUM detector already alarmed".into()));
        }
        check_dim(self.kernel.dimension(), x)?;
        self.n += 1;
        let y = self.sampler.draw();
        if !self.pending {
            self.pending_x.copy_from_slice(x);
            self.pending_y.copy_from_slice(y);
            self.pending = true;
            self.last_increment = None;
            return Ok(None);
        }
        let block = PairBlock::new(&self.pending_x, x, &self.pending_y, y);
        let v = g_unchecked(&self.kernel, &block) - self.delta;
        self.pending = false;
        self.last_increment = Some(v);
        self.z = (self.z + v).max(0.0);
        if self.z >= self.h {
            self.alarmed_at = Some(self.n);
            return Ok(Some(AlarmEvent { time: self.n, statistic: self.z }));
        }
        Ok(None)
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

/// Runs a fresh KCUSUM over `stream` and returns its first alarm, if any.
pub fn kcusum_run<K, I, O>(stream: I, h: f64, delta: f64, kernel: K, pool: ReferencePool) -> Result<Option<AlarmEvent>>
where
    K: Kernel + Clone,
    I: IntoIterator<Item = O>,
    O: AsRef<[f64]>,
{
    let mut det = Kcusum::new(h, delta, kernel, pool)?;
    crate::run_until_alarm(&mut det, stream)
}

#[derive(Clone, Debug)]
enum Phase<K> {
    Detecting(Box<Kcusum<K>>),
    Rebuilding(Vec<Observation>),
}

/// KCUSUM that keeps running after alarms.
///
/// After each alarm the next `reset_pool_size` observations become the new
/// reference pool (the post-change regime is the new normal), then a fresh
/// detector starts on the observation after them. Alarm times are global
/// 1-based stream indices.
#[derive(Clone, Debug)]
pub struct ResettingKcusum<K = GaussianKernel> {
    h: f64,
    delta: f64,
    kernel: K,
    reset_pool_size: usize,
    base_seed: u64,
    resets: u64,
    n: u64,
    phase: Phase<K>,
}

impl<K: Kernel + Clone> ResettingKcusum<K> {
    pub fn new(h: f64, delta: f64, kernel: K, pool: ReferencePool, reset_pool_size: usize) -> Result<Self> {
        if reset_pool_size < 2 {
            return Err(Error::invalid(format!("reset pool size must be >= 2, got {reset_pool_size}")));
        }
        let base_seed = pool.seed();
        let det = Kcusum::new(h, delta, kernel.clone(), pool)?;
        Ok(Self {
            h,
            delta,
            kernel,
            reset_pool_size,
            base_seed,
            resets: 0,
            n: 0,
            phase: Phase::Detecting(Box::new(det)),
        })
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<Option<AlarmEvent>> {
        check_dim(self.kernel.dimension(), x)?;
        self.n += 1;
        match &mut self.phase {
            Phase::Detecting(det) => {
                let Some(alarm) = det.observe(x)? else { return Ok(None) };
                self.phase = Phase::Rebuilding(Vec::with_capacity(self.reset_pool_size));
                Ok(Some(AlarmEvent { time: self.n, statistic: alarm.statistic }))
            }
            Phase::Rebuilding(buf) => {
                buf.push(x.to_vec());
                if buf.len() == self.reset_pool_size {
                    let samples = std::mem::take(buf);
                    let seed = derive_seed(self.base_seed, tag::RESET_POOL, self.resets);
                    self.resets += 1;
                    let pool = ReferencePool::new(samples, seed)?;
                    self.phase =
                        Phase::Detecting(Box::new(Kcusum::new(self.h, self.delta, self.kernel.clone(), pool)?));
                }
                Ok(None)
            }
        }
    }

    /// Current statistic; zero while the reference is being rebuilt.
    pub fn statistic(&self) -> f64 {
        match &self.phase {
            Phase::Detecting(d) => d.statistic(),
            Phase::Rebuilding(_) => 0.0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn is_rebuilding(&self) -> bool {
        matches!(self.phase, Phase::Rebuilding(_))
    }

    /// Number of reference pools rebuilt so far.
    pub fn resets(&self) -> u64 {
        self.resets
    }
}

/// Runs KCUSUM with reset-and-resample over the whole stream and returns
/// every alarm. A rebuild cut short by the end of the stream is dropped.
pub fn kcusum_run_with_reset<K, I, O>(
    stream: I,
    h: f64,
    delta: f64,
    kernel: K,
    pool: ReferencePool,
    reset_pool_size: usize,
) -> Result<Vec<AlarmEvent>>
where
    K: Kernel + Clone,
    I: IntoIterator<Item = O>,
    O: AsRef<[f64]>,
{
    let mut det = ResettingKcusum::new(h, delta, kernel, pool, reset_pool_size)?;
    let mut events = Vec::new();
    for x in stream {
        if let Some(a) = det.observe(x.as_ref())? {
            events.push(a);
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ChangeSpec};

    fn k1() -> GaussianKernel {
        GaussianKernel::new(1).unwrap()
    }

    fn normal_pool(size: usize, seed: u64) -> ReferencePool {
        ReferencePool::from_distribution(&Distribution::iso_normal(1, 1.0, 1.0).unwrap(), size, seed, seed + 1).unwrap()
    }

    fn stream(seed: u64, change_time: u64, length: u64) -> Vec<Vec<f64>> {
        generate(&ChangeSpec {
            pre: Distribution::iso_normal(1, 1.0, 1.0).unwrap(),
            post: Distribution::iso_normal(1, 1.0, 4.0).unwrap(),
            change_time,
            length,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn construction_checks() {
        let pool = normal_pool(16, 1);
        let det = Kcusum::new(5.0, 1.0 / 40.0, k1(), pool.clone()).unwrap();
        assert_eq!(det.statistic(), 0.0);
        assert_eq!(det.steps(), 0);
        assert!(det.pending().is_none());
        assert!(Kcusum::new(-1.0, 0.0, k1(), pool.clone()).is_err());
        assert!(Kcusum::new(1.0, -0.1, k1(), pool.clone()).is_err());
        assert!(Kcusum::new(1.0, 0.1, GaussianKernel::new(2).unwrap(), pool).is_err());
        assert!(ReferencePool::new(vec![], 0).is_err());
        assert!(ReferencePool::new(vec![vec![1.0], vec![1.0, 2.0]], 0).is_err());
    }

    #[test]
    fn odd_step_buffers_without_touching_statistic() {
        let mut det = Kcusum::new(0.0, 0.0, k1(), normal_pool(8, 2)).unwrap();
        assert_eq!(det.observe(&[3.0]).unwrap(), None);
        assert_eq!(det.statistic(), 0.0);
        let (px, py) = det.pending().unwrap();
        assert_eq!(px, &[3.0]);
        assert_eq!(py.len(), 1);
        assert_eq!(det.last_increment(), None);
    }

    #[test]
    fn identical_points_give_minus_delta() {
        let pool = ReferencePool::new(vec![vec![0.7]], 3).unwrap();
        let mut det = Kcusum::new(10.0, 0.025, k1(), pool).unwrap();
        det.observe(&[0.7]).unwrap();
        det.observe(&[0.7]).unwrap();
        assert!((det.last_increment().unwrap() + 0.025).abs() < 1e-15);
        assert_eq!(det.statistic(), 0.0);
        assert!(det.pending().is_none());
    }

    #[test]
    fn zero_threshold_alarms_at_first_even_step() {
        let a = kcusum_run(stream(4, 200, 400), 0.0, 0.5, k1(), normal_pool(64, 4)).unwrap().unwrap();
        assert_eq!(a.time, 2);
    }

    #[test]
    fn oversized_delta_never_alarms() {
        let s = stream(5, 2, 2000);
        assert_eq!(kcusum_run(&s, 1e-9, 4.0 + 1e-9, k1(), normal_pool(64, 5)).unwrap(), None);
    }

    #[test]
    fn alarms_only_on_even_steps_and_freeze() {
        for seed in 0..200 {
            let mut det = Kcusum::new(0.5, 0.01, k1(), normal_pool(64, seed)).unwrap();
            if let Some(a) = crate::run_until_alarm(&mut det, stream(seed, 10, 400)).unwrap() {
                assert_eq!(a.time % 2, 0);
                assert!(matches!(det.observe(&[0.0]), Err(Error::Usage(_))));
            }
        }
    }

    #[test]
    fn increments_are_bounded() {
        let k = GaussianKernel::scaled(1, 0.5, 0.5).unwrap();
        let pool = ReferencePool::from_distribution(&Distribution::iso_normal(1, 0.0, 1.0).unwrap(), 32, 1, 2).unwrap();
        let mut det = Kcusum::new(1e9, 0.3, k, pool).unwrap();
        for x in stream(6, 100, 2000) {
            det.observe(&x).unwrap();
            if let Some(v) = det.last_increment() {
                assert!(v.abs() <= 4.0 * 0.5 + 0.3);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = kcusum_run(stream(7, 200, 400), 5.0, 1.0 / 40.0, k1(), normal_pool(256, 7)).unwrap();
        let b = kcusum_run(stream(7, 200, 400), 5.0, 1.0 / 40.0, k1(), normal_pool(256, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_row_pool_always_returns_it() {
        let mut s = ReferencePool::new(vec![vec![2.5, -1.0]], 9).unwrap().sampler();
        for _ in 0..100 {
            assert_eq!(s.draw(), &[2.5, -1.0]);
        }
    }

    #[test]
    fn pool_draws_are_uniform() {
        let n_rows = 10;
        let pool = ReferencePool::new((0..n_rows).map(|i| vec![i as f64]).collect(), 7).unwrap();
        let mut s = pool.sampler();
        let draws = 100_000;
        let mut counts = vec![0usize; n_rows];
        for _ in 0..draws {
            counts[s.next_index()] += 1;
        }
        let p = 1.0 / n_rows as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let expected = draws as f64 * p;
        let chi_sq: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 9 degrees of freedom.
        assert!(chi_sq < 27.877, "chi-square {chi_sq}");
        for c in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 3.0 * se, "{c}");
        }
    }

    #[test]
    fn pool_sampling_is_seeded() {
        let pool = normal_pool(50, 1);
        let a: Vec<usize> = {
            let mut s = pool.sampler();
            (0..20).map(|_| s.next_index()).collect()
        };
        let b: Vec<usize> = {
            let mut s = pool.sampler();
            (0..20).map(|_| s.next_index()).collect()
        };
        let c: Vec<usize> = {
            let mut s = pool.with_seed(99).sampler();
            (0..20).map(|_| s.next_index()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn reset_rebuilds_pool_from_following_observations() {
        let pool = ReferencePool::new(vec![vec![0.0]], 1).unwrap();
        let mut det = ResettingKcusum::new(0.0, 0.0, k1(), pool, 4).unwrap();
        assert!(det.observe(&[1.0]).unwrap().is_none());
        assert_eq!(det.observe(&[1.0]).unwrap().unwrap().time, 2);
        for _ in 0..4 {
            assert!(det.observe(&[5.0]).unwrap().is_none());
            assert_eq!(det.statistic(), 0.0);
        }
        assert!(!det.is_rebuilding());
        assert_eq!(det.resets(), 1);
        det.observe(&[5.0]).unwrap();
        assert_eq!(det.observe(&[5.0]).unwrap().unwrap().time, 8);
        assert!(ResettingKcusum::new(0.0, 0.0, k1(), normal_pool(4, 1), 1).is_err());
    }

    #[test]
    fn no_change_with_large_threshold_has_no_events() {
        let s = stream(8, 999, 999);
        let events = kcusum_run_with_reset(&s, 200.0, 0.05, k1(), normal_pool(128, 8), 64).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn truncated_rebuild_is_not_an_error() {
        let pool = ReferencePool::new(vec![vec![0.0]], 1).unwrap();
        let events = kcusum_run_with_reset([[1.0], [1.0], [2.0]], 0.0, 0.0, k1(), pool, 64).unwrap();
        assert_eq!(events.len(), 1);
    }
}
