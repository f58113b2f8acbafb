//! Streaming change-point detection with the parametric CUSUM detector and
//! the non-parametric kernel CUSUM (KCUSUM) detector.
//!
//! The crate is organised around a handful of modules:
//!
//! - [`kernel_mmd`]: kernels and the maximum mean discrepancy estimators.
//! - [`cusum`]: Page's CUSUM with a Gaussian likelihood-ratio model.
//! - [`kcusum`]: kernel CUSUM with reference pools and reset-and-resample runs.
//! - [`bounds`]: closed-form false-alarm and delay bounds.
//! - [`simeval`]: Monte Carlo measurement of run length to false alarm and
//!   detection delay, plus random-walk simulations backing the bounds.
//! - [`data`]: synthetic stream generators and delimited stream files.
//! - [`cli`]: the `kcusum` command-line front end.
//!
//! Observations are plain `&[f64]` slices of a fixed dimension; owned
//! sequences are `Vec<Observation>`.

#![forbid(unsafe_code)]

pub mod bounds;
pub mod cli;
pub mod cusum;
pub mod data;
mod error;
pub mod kcusum;
pub mod kernel_mmd;
pub mod rng;
pub mod simeval;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// One time step of a stream: a fixed-dimension real vector.
pub type Observation = Vec<f64>;

/// Stopping time and statistic value at detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    /// 1-based index of the observation that triggered the alarm.
    pub time: u64,
    /// Detection statistic at the alarm.
    pub statistic: f64,
}

/// Common surface of the online detectors.
///
/// `observe` consumes one observation and returns the alarm, if the
/// statistic reached its threshold at this step. A detector that has alarmed
/// is frozen; further observations are a usage error.
pub trait Detector {
    fn observe(&mut self, x: &[f64]) -> Result<Option<AlarmEvent>>;

    /// Current value of the running statistic `Z_n`.
    fn statistic(&self) -> f64;

    /// Number of observations consumed so far.
    fn steps(&self) -> u64;

    fn alarmed_at(&self) -> Option<u64>;
}

/// Feeds `stream` into `detector` until the first alarm.
///
/// Consumes the stream at most once and stops pulling items after the
/// alarm.
pub fn run_until_alarm<D, I, O>(detector: &mut D, stream: I) -> Result<Option<AlarmEvent>>
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = O>,
    O: AsRef<[f64]>,
{
    for x in stream {
        if let Some(alarm) = detector.observe(x.as_ref())? {
            return Ok(Some(alarm));
        }
    }
    Ok(None)
}
