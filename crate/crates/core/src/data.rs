//! Synthetic stream generators and the delimited stream file format.
//!
//! Stream files hold one observation per line as comma-separated reals.
//! Lines starting with `#` and blank lines are skipped. The first data line
//! is treated as a header when none of its fields parse as a number. Values
//! are written with 17 significant digits so every `f64` survives a
//! write/read round trip bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kcusum::ReferencePool;
use crate::rng::{rng_from_seed, SimRng};
use crate::{Error, Observation, Result};

/// Distribution descriptor for generated observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    /// Independent normal coordinates with per-coordinate mean and variance.
    Normal { mean: Vec<f64>, variance: Vec<f64> },
}

impl Distribution {
    pub fn normal(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != variance.len() {
            return Err(Error::invalid(format!(
                "normal descriptor needs equal non-zero mean/variance lengths, got {} and {}",
                mean.len(),
                variance.len()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("normal mean must be finite"));
        }
        if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("normal variance must be finite and > 0"));
        }
        Ok(Distribution::Normal { mean, variance })
    }

    /// Same mean and variance on every coordinate.
    pub fn iso_normal(dimension: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::normal(vec![mean; dimension], vec![variance; dimension])
    }

    pub fn dimension(&self) -> usize {
        match self {
            Distribution::Normal { mean, .. } => mean.len(),
        }
    }

    /// Writes one draw into `out`, consuming one standard normal per
    /// coordinate in order.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Distribution::Normal { mean, variance } => {
                for ((o, m), v) in out.iter_mut().zip(mean).zip(variance) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + v.sqrt() * z;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let mut out = vec![0.0; self.dimension()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// A single change from `pre` to `post`: observations `1..t-1` come from
/// `pre`, `t..=length` from `post`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub pre: Distribution,
    pub post: Distribution,
    pub change_time: u64,
    pub length: u64,
    pub seed: u64,
}

impl ChangeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pre.dimension() != self.post.dimension() {
            return Err(Error::invalid(format!(
                "pre and post dimensions differ: {} vs {}",
                self.pre.dimension(),
                self.post.dimension()
            )));
        }
        if self.change_time < 1 || self.change_time > self.length {
            return Err(Error::invalid(format!(
                "change time must satisfy 1 <= t <= n, got t={} n={}",
                self.change_time, self.length
            )));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.pre.dimension()
    }
}

/// Lazy generator behind [`generate`]; yields `length` observations.
#[derive(Clone, Debug)]
pub struct ChangeStream {
    pre: Distribution,
    post: Distribution,
    change_time: u64,
    length: u64,
    next: u64,
    rng: SimRng,
}

impl ChangeStream {
    /// An endless-or-bounded stream with a change at `change_time`. A
    /// `change_time` beyond `length` gives a no-change stream.
    pub fn new(pre: Distribution, post: Distribution, change_time: u64, length: u64, seed: u64) -> Self {
        Self { pre, post, change_time, length, next: 1, rng: rng_from_seed(seed) }
    }

    pub fn from_spec(spec: &ChangeSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::new(spec.pre.clone(), spec.post.clone(), spec.change_time, spec.length, spec.seed))
    }

    /// Fills `out` with the next observation, or returns `false` at the end.
    pub fn next_into(&mut self, out: &mut [f64]) -> bool {
        if self.next > self.length {
            return false;
        }
        let dist = if self.next < self.change_time { &self.pre } else { &self.post };
        dist.sample_into(&mut self.rng, out);
        self.next += 1;
        true
    }

    pub fn dimension(&self) -> usize {
        self.pre.dimension()
    }
}

impl Iterator for ChangeStream {
    type Item = Observation;

    fn next(&mut self) -> Option<Observation> {
        let mut out = vec![0.0; self.dimension()];
        self.next_into(&mut out).then_some(out)
    }
}

pub fn generate(spec: &ChangeSpec) -> Result<Vec<Observation>> {
    Ok(ChangeStream::from_spec(spec)?.collect())
}

/// One regime of a multi-change stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub distribution: Distribution,
    pub run_length: u64,
}

/// Concatenated i.i.d. segments drawn from a single seeded generator.
pub fn generate_multi(segments: &[Segment], seed: u64) -> Result<Vec<Observation>> {
    let first = segments.first().ok_or_else(|| Error::invalid("at least one segment is required"))?;
    let dim = first.distribution.dimension();
    if let Some(s) = segments.iter().find(|s| s.run_length == 0) {
        return Err(Error::invalid(format!("segment run length must be >= 1, got {}", s.run_length)));
    }
    if segments.iter().any(|s| s.distribution.dimension() != dim) {
        return Err(Error::invalid("all segments must share a dimension"));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(segments.iter().map(|s| s.run_length as usize).sum());
    for s in segments {
        for _ in 0..s.run_length {
            out.push(s.distribution.sample(&mut rng));
        }
    }
    Ok(out)
}

/// Formats a value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes observations as comma-separated rows, optionally preceded by
/// `#` comment lines.
pub fn write_stream<W, I, O>(mut w: W, comments: &[String], observations: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = O>,
    O: AsRef<[f64]>,
{
    for c in comments {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut line = String::new();
    for obs in observations {
        line.clear();
        for (i, v) in obs.as_ref().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format_value(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Lazily parses a stream file, one observation per data line.
pub struct StreamReader<R> {
    reader: R,
    buf: String,
    line_no: usize,
    dimension: Option<usize>,
    seen_data: bool,
}

impl<R: BufRead> StreamReader<R> {
    /// With `dimension = None` the width of the first data row is used.
    pub fn new(reader: R, dimension: Option<usize>) -> Self {
        Self { reader, buf: String::new(), line_no: 0, dimension, seen_data: false }
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    fn parse_line(&mut self) -> Option<Result<Observation>> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !self.seen_data {
                self.seen_data = true;
                if fields.iter().all(|f| f.parse::<f64>().is_err()) {
                    continue;
                }
            }
            let line_no = self.line_no;
            let expected = *self.dimension.get_or_insert(fields.len());
            if fields.len() != expected {
                return Some(Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected} columns, found {}", fields.len()),
                }));
            }
            let mut obs = Vec::with_capacity(expected);
            for (col, f) in fields.iter().enumerate() {
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => obs.push(v),
                    Ok(v) => {
                        return Some(Err(Error::Parse {
                            line: line_no,
                            message: format!("non-finite value {v} in column {}", col + 1),
                        }))
                    }
                    Err(_) => {
                        return Some(Err(Error::Parse {
                            line: line_no,
                            message: format!("column {} is not a number: {f:?}", col + 1),
                        }))
                    }
                }
            }
            return Some(Ok(obs));
        }
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<Observation>;

    fn next(&mut self) -> Option<Self::Item> {
        self.parse_line()
    }
}

pub fn read_stream<R: BufRead>(reader: R, dimension: Option<usize>) -> StreamReader<R> {
    StreamReader::new(reader, dimension)
}

pub fn open_stream(path: impl AsRef<Path>, dimension: Option<usize>) -> Result<StreamReader<BufReader<File>>> {
    let f = File::open(path)?;
    Ok(StreamReader::new(BufReader::new(f), dimension))
}

/// Builds a reference pool from every row of a stream file.
pub fn load_reference(path: impl AsRef<Path>, dimension: Option<usize>, seed: u64) -> Result<ReferencePool> {
    let rows = open_stream(path, dimension)?.collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::invalid("reference file contains no observations"));
    }
    ReferencePool::new(rows, seed)
}
