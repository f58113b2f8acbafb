//! Monte Carlo evaluation of detectors.
//!
//! [`estimate_arl2fa`] measures the run length to false alarm on no-change
//! streams and [`estimate_esadd`] the detection delay on streams with a
//! change. Trials run in parallel; each trial derives its seeds from the base
//! seed and its index through [`derive_seed`], and results are reduced in
//! trial order, so a report is bit-identical for any thread count.
//!
//! The worst-case delay over pre-change histories cannot be computed; it is
//! approximated by the maximum and 95th percentile of the observed delays.

mod walk;

pub use walk::{
    simulate_c1, simulate_exit_time, simulate_sup_crossing, C1Estimate, CrossingEstimate, ExitEstimate, Increment,
};

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::bounds::{kcusum_esadd_upper, smallest_h_for_arl2fa};
use crate::cusum::{Cusum, GaussianModelSpec, LikelihoodModel};
use crate::data::{ChangeStream, Distribution};
use crate::kcusum::{Kcusum, ReferencePool};
use crate::kernel_mmd::{GaussianKernel, Kernel};
use crate::rng::{derive_seed, rng_from_seed, tag, SimRng};
use crate::{AlarmEvent, Detector, Error, Observation, Result};

/// Default censoring horizon for run-length-to-false-alarm trials.
pub const DEFAULT_ARL_HORIZON: u64 = 100_000;
/// Default number of post-change observations per delay trial.
pub const DEFAULT_POST_HORIZON: u64 = 10_000;
pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_POOL_SIZE: usize = 1_000;

/// Where a KCUSUM trial gets its reference pool.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSource {
    /// A fresh pool of `size` draws from the pre-change distribution per trial.
    Generated { size: usize },
    /// One shared pool; each trial gets its own draw sequence over it.
    Fixed { pool: ReferencePool },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KcusumConfig {
    pub h: f64,
    pub delta: f64,
    pub kernel: GaussianKernel,
    pub reference: ReferenceSource,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum DetectorConfig {
    Cusum { model: GaussianModelSpec, h: f64 },
    Kcusum(KcusumConfig),
}

impl DetectorConfig {
    pub fn threshold(&self) -> f64 {
        match self {
            DetectorConfig::Cusum { h, .. } => *h,
            DetectorConfig::Kcusum(c) => c.h,
        }
    }

    /// Copy with a different threshold.
    pub fn with_threshold(&self, h: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            DetectorConfig::Cusum { h: x, .. } => *x = h,
            DetectorConfig::Kcusum(k) => k.h = h,
        }
        c
    }
}

/// A fixed base stream shared by all trials; serialized as a summary.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseStream(pub Arc<Vec<Observation>>);

impl BaseStream {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or_else(|| Error::invalid("base stream is empty"))?;
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("base stream rows differ in dimension"));
        }
        Ok(Self(Arc::new(rows)))
    }

    pub fn dimension(&self) -> usize {
        self.0[0].len()
    }
}

impl Serialize for BaseStream {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("BaseStream", 2)?;
        st.serialize_field("rows", &self.0.len())?;
        st.serialize_field("dimension", &self.dimension())?;
        st.end()
    }
}

/// How trial streams are produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSource {
    /// Fresh i.i.d. normal draws per trial, `pre` before the change and
    /// `post` from it on, optionally with an extra N(0, 1) noise layer.
    Normal { pre: Distribution, post: Distribution, noise_mask: bool },
    /// A fixed stream made unique per trial by adding N(0, 1) noise.
    Masked { base: BaseStream },
}

impl StreamSource {
    fn dimension(&self) -> usize {
        match self {
            StreamSource::Normal { pre, .. } => pre.dimension(),
            StreamSource::Masked { base } => base.dimension(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let StreamSource::Normal { pre, post, .. } = self {
            if pre.dimension() != post.dimension() {
                return Err(Error::invalid("pre and post distributions differ in dimension"));
            }
        }
        Ok(())
    }
}

#[allow(clippy::large_enum_variant)]
enum TrialStream<'a> {
    Normal { inner: ChangeStream, noise: Option<SimRng> },
    Masked { base: &'a [Observation], next: usize, end: usize, noise: SimRng },
}

impl TrialStream<'_> {
    fn next_into(&mut self, out: &mut [f64]) -> bool {
        match self {
            TrialStream::Normal { inner, noise } => {
                if !inner.next_into(out) {
                    return false;
                }
                if let Some(rng) = noise {
                    add_noise(rng, out);
                }
                true
            }
            TrialStream::Masked { base, next, end, noise } => {
                if *next >= *end {
                    return false;
                }
                out.copy_from_slice(&base[*next]);
                *next += 1;
                add_noise(noise, out);
                true
            }
        }
    }
}

fn add_noise(rng: &mut SimRng, out: &mut [f64]) {
    for v in out {
        *v += rng.sample::<f64, _>(StandardNormal);
    }
}

/// Adds i.i.d. N(0, 1) noise to every coordinate, deterministically per seed.
pub fn noise_mask<O: AsRef<[f64]>>(stream: &[O], seed: u64) -> Vec<Observation> {
    let mut rng = rng_from_seed(seed);
    stream
        .iter()
        .map(|x| {
            let mut v = x.as_ref().to_vec();
            add_noise(&mut rng, &mut v);
            v
        })
        .collect()
}

enum Prepared {
    Cusum { model: LikelihoodModel, h: f64 },
    Kcusum(KcusumConfig),
}

#[allow(clippy::large_enum_variant)]
enum TrialDetector {
    Cusum(Cusum),
    Kcusum(Kcusum<GaussianKernel>),
}

impl TrialDetector {
    fn observe(&mut self, x: &[f64]) -> Result<Option<AlarmEvent>> {
        match self {
            TrialDetector::Cusum(d) => d.observe(x),
            TrialDetector::Kcusum(d) => d.observe(x),
        }
    }
}

impl Prepared {
    fn new(config: &DetectorConfig, source: &StreamSource) -> Result<Self> {
        source.validate()?;
        let dim = source.dimension();
        match config {
            DetectorConfig::Cusum { model, h } => {
                if dim != 1 {
                    return Err(Error::invalid("the Gaussian CUSUM model needs a 1-dimensional stream"));
                }
                let model = LikelihoodModel::gaussian(model.mean0, model.var0, model.mean1, model.var1)?;
                Cusum::new(model.clone(), *h)?;
                Ok(Prepared::Cusum { model, h: *h })
            }
            DetectorConfig::Kcusum(c) => {
                if c.kernel.dimension() != dim {
                    return Err(Error::invalid(format!(
                        "kernel dimension {} does not match stream dimension {dim}",
                        c.kernel.dimension()
                    )));
                }
                match (&c.reference, source) {
                    (ReferenceSource::Generated { size: 0 }, _) => {
                        return Err(Error::invalid("generated reference pool size must be >= 1"))
                    }
                    (ReferenceSource::Generated { .. }, StreamSource::Masked { .. }) => {
                        return Err(Error::invalid("masked streams need a fixed reference pool"))
                    }
                    _ => {}
                }
                // Validates h, delta and the pool dimension once up front.
                let probe = ReferencePool::new(vec![vec![0.0; dim]], 0)?;
                let pool = match &c.reference {
                    ReferenceSource::Fixed { pool } => pool.clone(),
                    ReferenceSource::Generated { .. } => probe,
                };
                Kcusum::new(c.h, c.delta, c.kernel, pool)?;
                Ok(Prepared::Kcusum(c.clone()))
            }
        }
    }

    fn build(&self, source: &StreamSource, seed: u64, trial: u64) -> Result<TrialDetector> {
        match self {
            Prepared::Cusum { model, h } => Ok(TrialDetector::Cusum(Cusum::new(model.clone(), *h)?)),
            Prepared::Kcusum(c) => {
                let draw_seed = derive_seed(seed, tag::REFERENCE_DRAWS, trial);
                let pool = match (&c.reference, source) {
                    (ReferenceSource::Fixed { pool }, _) => pool.with_seed(draw_seed),
                    (ReferenceSource::Generated { size }, StreamSource::Normal { pre, .. }) => {
                        ReferencePool::from_distribution(
                            pre,
                            *size,
                            derive_seed(seed, tag::REFERENCE_POOL, trial),
                            draw_seed,
                        )?
                    }
                    (ReferenceSource::Generated { .. }, StreamSource::Masked { .. }) => {
                        unreachable!("checked in Prepared::new")
                    }
                };
                Ok(TrialDetector::Kcusum(Kcusum::new(c.h, c.delta, c.kernel, pool)?))
            }
        }
    }
}

fn trial_stream<'a>(source: &'a StreamSource, change_time: u64, length: u64, seed: u64, trial: u64) -> TrialStream<'a> {
    let stream_seed = derive_seed(seed, tag::STREAM, trial);
    let noise_seed = derive_seed(seed, tag::NOISE, trial);
    match source {
        StreamSource::Normal { pre, post, noise_mask } => TrialStream::Normal {
            inner: ChangeStream::new(pre.clone(), post.clone(), change_time, length, stream_seed),
            noise: noise_mask.then(|| rng_from_seed(noise_seed)),
        },
        StreamSource::Masked { base } => TrialStream::Masked {
            base: &base.0,
            next: 0,
            end: (length.min(base.0.len() as u64)) as usize,
            noise: rng_from_seed(noise_seed),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Detection,
    FalseAlarm,
    Censored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    /// Seed of the trial's stream.
    pub seed: u64,
    pub change_time: Option<u64>,
    pub stop_time: Option<u64>,
    pub outcome: Outcome,
    pub delay: Option<u64>,
}

impl TrialRecord {
    fn classify(trial_id: u64, seed: u64, change_time: Option<u64>, stop_time: Option<u64>) -> Self {
        let (outcome, delay) = match (stop_time, change_time) {
            (None, _) => (Outcome::Censored, None),
            (Some(_), None) => (Outcome::FalseAlarm, None),
            (Some(t_stop), Some(t)) if t_stop < t => (Outcome::FalseAlarm, None),
            (Some(t_stop), Some(t)) => (Outcome::Detection, Some(t_stop - t)),
        };
        Self { trial_id, seed, change_time, stop_time, outcome, delay }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Arl2fa,
    Esadd,
}

/// Everything needed to rerun an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalConfig {
    pub kind: EvalKind,
    pub detector: DetectorConfig,
    pub source: StreamSource,
    pub change_time: Option<u64>,
    pub trials: usize,
    /// Stream length for false-alarm runs, post-change length for delay runs.
    pub horizon: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean run length to the first alarm over no-change data, with
    /// unalarmed runs counted at their censoring time. For delay runs the
    /// pre-change segment (length `t - 1`) is the no-change data.
    pub arl2fa_mean: f64,
    pub arl2fa_se: f64,
    /// True when censoring makes `arl2fa_mean` a lower bound.
    pub arl2fa_lower_flag: bool,
    pub esadd_mean: Option<f64>,
    pub esadd_se: Option<f64>,
    pub esadd_p05: Option<f64>,
    pub esadd_median: Option<f64>,
    pub esadd_p95: Option<f64>,
    pub esadd_max: Option<f64>,
    pub false_alarm_rate: f64,
    /// Detections over trials without a false alarm (delay runs only).
    pub detection_rate: Option<f64>,
    pub detections: usize,
    pub false_alarms: usize,
    pub censored: usize,
    pub trials: Vec<TrialRecord>,
    pub config_echo: EvalConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Trial records as CSV with columns
    /// `trial_id,seed,change_time,stop_time,outcome,delay`.
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.trials {
            w.serialize(t)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Linear-interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Ordinary least squares `y = slope * x + intercept` with its R².
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("linear fit needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

fn run_trials(config: &EvalConfig, stream_len: u64, change_time: u64) -> Result<Vec<TrialRecord>> {
    let prepared = Prepared::new(&config.detector, &config.source)?;
    let dim = config.source.dimension();
    let echo_change = (config.kind == EvalKind::Esadd).then_some(change_time);
    (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut det = prepared.build(&config.source, config.seed, trial)?;
            let mut stream = trial_stream(&config.source, change_time, stream_len, config.seed, trial);
            let mut buf = vec![0.0; dim];
            let mut stop = None;
            while stream.next_into(&mut buf) {
                if let Some(a) = det.observe(&buf)? {
                    stop = Some(a.time);
                    break;
                }
            }
            let stream_seed = derive_seed(config.seed, tag::STREAM, trial);
            Ok(TrialRecord::classify(trial, stream_seed, echo_change, stop))
        })
        .collect()
}

fn summarize(config: EvalConfig, trials: Vec<TrialRecord>) -> EvalReport {
    let n = trials.len();
    let count = |o: Outcome| trials.iter().filter(|t| t.outcome == o).count();
    let (detections, false_alarms, censored) =
        (count(Outcome::Detection), count(Outcome::FalseAlarm), count(Outcome::Censored));

    let (run_lengths, lower_flag): (Vec<f64>, bool) = match config.kind {
        EvalKind::Arl2fa => {
            (trials.iter().map(|t| t.stop_time.unwrap_or(config.horizon) as f64).collect(), censored > 0)
        }
        EvalKind::Esadd => {
            let pre_len = config.change_time.unwrap_or(1) - 1;
            (
                trials
                    .iter()
                    .map(|t| match t.outcome {
                        Outcome::FalseAlarm => t.stop_time.unwrap_or(pre_len) as f64,
                        _ => pre_len as f64,
                    })
                    .collect(),
                false_alarms < n,
            )
        }
    };
    let (arl2fa_mean, arl2fa_se) = mean_se(&run_lengths);

    let mut delays: Vec<f64> = trials.iter().filter_map(|t| t.delay.map(|d| d as f64)).collect();
    delays.sort_by(f64::total_cmp);
    let have = !delays.is_empty();
    let (dm, dse) = mean_se(&delays);
    let q = |p: f64| have.then(|| quantile_sorted(&delays, p));

    let detection_rate = match config.kind {
        EvalKind::Esadd if false_alarms < n => Some(detections as f64 / (n - false_alarms) as f64),
        _ => None,
    };

    EvalReport {
        arl2fa_mean,
        arl2fa_se,
        arl2fa_lower_flag: lower_flag,
        esadd_mean: have.then_some(dm),
        esadd_se: have.then_some(dse),
        esadd_p05: q(0.05),
        esadd_median: q(0.5),
        esadd_p95: q(0.95),
        esadd_max: delays.last().copied(),
        false_alarm_rate: false_alarms as f64 / n as f64,
        detection_rate,
        detections,
        false_alarms,
        censored,
        trials,
        config_echo: config,
    }
}

/// Runs `trials` no-change streams of length `horizon` and records the first
/// alarm of each. Unalarmed runs are censored at `horizon`.
pub fn estimate_arl2fa(
    detector: &DetectorConfig,
    source: &StreamSource,
    trials: usize,
    horizon: u64,
    seed: u64,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let config = EvalConfig {
        kind: EvalKind::Arl2fa,
        detector: detector.clone(),
        source: source.clone(),
        change_time: None,
        trials,
        horizon,
        seed,
    };
    // A change time past the horizon keeps the whole stream pre-change.
    let records = run_trials(&config, horizon, u64::MAX)?;
    Ok(summarize(config, records))
}

/// Runs `trials` streams with a change at `change_time` followed by
/// `post_horizon` post-change observations, classifying each run as a
/// detection (alarm at or after the change), a false alarm, or censored.
pub fn estimate_esadd(
    detector: &DetectorConfig,
    source: &StreamSource,
    change_time: u64,
    trials: usize,
    post_horizon: u64,
    seed: u64,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if change_time < 1 {
        return Err(Error::invalid("change time must be >= 1"));
    }
    if post_horizon == 0 {
        return Err(Error::invalid("post-change horizon must be >= 1"));
    }
    let config = EvalConfig {
        kind: EvalKind::Esadd,
        detector: detector.clone(),
        source: source.clone(),
        change_time: Some(change_time),
        trials,
        horizon: post_horizon,
        seed,
    };
    let records = run_trials(&config, change_time - 1 + post_horizon, change_time)?;
    Ok(summarize(config, records))
}

/// Measurement settings for [`tradeoff_curve`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffMeasurement {
    pub source: StreamSource,
    pub change_time: u64,
    pub trials: usize,
    pub post_horizon: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub level: f64,
    pub h: f64,
    pub delay_bound: f64,
    pub measured_delay: Option<f64>,
    pub measured_se: Option<f64>,
    pub detection_rate: Option<f64>,
}

/// For each false-alarm level, the smallest guaranteeing threshold, the
/// delay bound at that threshold and, optionally, the measured mean delay.
///
/// `delta` and `k_inf` come from `detector`; `dk_sq` is the squared MMD of
/// the change being targeted.
pub fn tradeoff_curve(
    detector: &KcusumConfig,
    dk_sq: f64,
    levels: &[f64],
    measure: Option<&TradeoffMeasurement>,
) -> Result<Vec<TradeoffRow>> {
    if levels.is_empty() {
        return Err(Error::invalid("at least one false-alarm level is required"));
    }
    if let Some(l) = levels.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::invalid(format!("false-alarm levels must be finite and > 0, got {l}")));
    }
    let k_inf = detector.kernel.sup_bound();
    levels
        .iter()
        .map(|&level| {
            let h = smallest_h_for_arl2fa(level, detector.delta, k_inf)?;
            let delay_bound = kcusum_esadd_upper(h, detector.delta, k_inf, dk_sq)?;
            let mut row =
                TradeoffRow { level, h, delay_bound, measured_delay: None, measured_se: None, detection_rate: None };
            if let Some(m) = measure {
                let cfg = DetectorConfig::Kcusum(KcusumConfig { h, ..detector.clone() });
                let rep = estimate_esadd(&cfg, &m.source, m.change_time, m.trials, m.post_horizon, m.seed)?;
                row.measured_delay = rep.esadd_mean;
                row.measured_se = rep.esadd_se;
                row.detection_rate = rep.detection_rate;
            }
            Ok(row)
        })
        .collect()
}

/// Runs `f` on a dedicated rayon pool with `threads` workers.
pub fn with_threads<T, F>(threads: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_source() -> StreamSource {
        let d = Distribution::iso_normal(1, 1.0, 1.0).unwrap();
        StreamSource::Normal { pre: d, post: Distribution::iso_normal(1, 1.0, 4.0).unwrap(), noise_mask: false }
    }

    fn kcusum(h: f64, delta: f64) -> DetectorConfig {
        DetectorConfig::Kcusum(KcusumConfig {
            h,
            delta,
            kernel: GaussianKernel::new(1).unwrap(),
            reference: ReferenceSource::Generated { size: 64 },
        })
    }

    #[test]
    fn classification_rules() {
        let r = TrialRecord::classify(0, 0, Some(10), Some(5));
        assert_eq!((r.outcome, r.delay), (Outcome::FalseAlarm, None));
        let r = TrialRecord::classify(0, 0, Some(10), Some(10));
        assert_eq!((r.outcome, r.delay), (Outcome::Detection, Some(0)));
        let r = TrialRecord::classify(0, 0, Some(10), None);
        assert_eq!((r.outcome, r.delay), (Outcome::Censored, None));
        let r = TrialRecord::classify(0, 0, None, Some(3));
        assert_eq!(r.outcome, Outcome::FalseAlarm);
    }

    #[test]
    fn quantiles_and_fit() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
        assert!((quantile_sorted(&xs, 0.95) - 4.8).abs() < 1e-12);
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(estimate_arl2fa(&kcusum(1.0, 0.1), &normal_source(), 0, 10, 1).is_err());
        assert!(estimate_esadd(&kcusum(1.0, 0.1), &normal_source(), 5, 0, 10, 1).is_err());
        assert!(estimate_esadd(&kcusum(1.0, 0.1), &normal_source(), 0, 3, 10, 1).is_err());
    }

    #[test]
    fn zero_threshold_gives_run_length_two() {
        let rep = estimate_arl2fa(&kcusum(0.0, 0.1), &normal_source(), 50, 1000, 3).unwrap();
        assert_eq!(rep.arl2fa_mean, 2.0);
        assert!(!rep.arl2fa_lower_flag);
        assert_eq!(rep.censored, 0);
        assert_eq!(rep.false_alarm_rate, 1.0);
    }

    #[test]
    fn undetectable_delta_censors_everything() {
        let rep = estimate_arl2fa(&kcusum(1.0, 4.5), &normal_source(), 20, 500, 3).unwrap();
        assert_eq!(rep.arl2fa_mean, 500.0);
        assert!(rep.arl2fa_lower_flag);
        assert_eq!(rep.censored, 20);
        assert_eq!(rep.false_alarm_rate, 0.0);
    }

    #[test]
    fn first_even_step_detector_has_unit_delay() {
        let rep = estimate_esadd(&kcusum(0.0, 0.1), &normal_source(), 1, 30, 100, 4).unwrap();
        assert!(rep.trials.iter().all(|t| t.stop_time == Some(2) && t.delay == Some(1)));
        assert_eq!(rep.esadd_mean, Some(1.0));
        assert_eq!(rep.esadd_max, Some(1.0));
        assert_eq!(rep.detection_rate, Some(1.0));
    }

    #[test]
    fn cusum_needs_one_dimension() {
        let src = StreamSource::Normal {
            pre: Distribution::iso_normal(2, 0.0, 1.0).unwrap(),
            post: Distribution::iso_normal(2, 0.0, 1.0).unwrap(),
            noise_mask: false,
        };
        let det =
            DetectorConfig::Cusum { model: GaussianModelSpec { mean0: 0.0, var0: 1.0, mean1: 1.0, var1: 1.0 }, h: 1.0 };
        assert!(estimate_arl2fa(&det, &src, 1, 10, 0).is_err());
    }

    #[test]
    fn masked_source_requires_fixed_pool() {
        let base = BaseStream::new(vec![vec![0.0]; 10]).unwrap();
        let src = StreamSource::Masked { base };
        assert!(estimate_arl2fa(&kcusum(1.0, 0.1), &src, 1, 10, 0).is_err());
    }

    #[test]
    fn noise_mask_is_deterministic() {
        let xs = vec![vec![1.0, 2.0]; 100];
        assert_eq!(noise_mask(&xs, 5), noise_mask(&xs, 5));
        assert_ne!(noise_mask(&xs, 5), noise_mask(&xs, 6));
        assert_eq!(noise_mask(&xs, 5).len(), 100);
    }

    #[test]
    fn noise_mask_moments() {
        let n = 100_000;
        let xs = vec![vec![3.0]; n];
        let diffs: Vec<f64> = noise_mask(&xs, 17).iter().map(|v| v[0] - 3.0).collect();
        let (mean, se) = mean_se(&diffs);
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var of a sample variance of N(0,1) draws is 2 / (n - 1).
        assert!((var - 1.0).abs() < 3.0 * (2.0 / (n - 1) as f64).sqrt(), "var {var}");
        assert!(se > 0.0);
    }

    #[test]
    fn tradeoff_rows_without_measurement() {
        let det = KcusumConfig {
            h: 0.0,
            delta: 1.0 / 32.0,
            kernel: GaussianKernel::scaled(1, 1.0, 0.5).unwrap(),
            reference: ReferenceSource::Generated { size: 10 },
        };
        let rows = tradeoff_curve(&det, 1.0 / 6.0, &[2.0], None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].h, 0.0);
        let rows = tradeoff_curve(&det, 1.0 / 6.0, &[10.0, 1e2, 1e3, 1e4], None).unwrap();
        let fit = linear_fit(
            &rows.iter().map(|r| r.level.ln()).collect::<Vec<_>>(),
            &rows.iter().map(|r| r.delay_bound).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(tradeoff_curve(&det, 1.0 / 6.0, &[], None).is_err());
        assert_eq!(tradeoff_curve(&det, 1.0 / 6.0, &[1.5], None).unwrap()[0].h, 0.0);
        assert!(tradeoff_curve(&det, 1.0 / 6.0, &[0.0], None).is_err());
        assert!(tradeoff_curve(&det, 0.01, &[10.0], None).is_err());
    }

    #[test]
    fn report_serializes() {
        let rep = estimate_esadd(&kcusum(2.0, 0.05), &normal_source(), 50, 5, 200, 9).unwrap();
        let json = rep.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["trials"].as_array().unwrap().len(), 5);
        let csv = rep.trials_csv().unwrap();
        assert!(csv.starts_with("trial_id,seed,change_time,stop_time,outcome,delay\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}
