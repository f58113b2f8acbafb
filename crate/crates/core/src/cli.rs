//! The `kcusum` command-line front end.
//!
//! Exit status: 0 when a run completes without alarm, 2 when `detect`
//! raised at least one alarm, 1 on any error. Errors are written to stderr
//! as a single JSON line `{"error": kind, "message": text}`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bounds::{cusum_arl2fa_lower, cusum_esadd_bound, kcusum_arl2fa_lower, kcusum_esadd_upper, kcusum_rate};
use crate::cusum::{Cusum, GaussianModelSpec, LikelihoodModel};
use crate::data::{format_value, load_reference, read_stream, write_stream, ChangeSpec, ChangeStream, Distribution};
use crate::kcusum::{Kcusum, ReferencePool, ResettingKcusum, DEFAULT_RESET_POOL_SIZE};
use crate::kernel_mmd::GaussianKernel;
use crate::rng::{derive_seed, tag};
use crate::simeval::{
    estimate_arl2fa, estimate_esadd, tradeoff_curve, with_threads, BaseStream, DetectorConfig, EvalReport,
    KcusumConfig, ReferenceSource, StreamSource, TradeoffMeasurement, DEFAULT_ARL_HORIZON, DEFAULT_POOL_SIZE,
    DEFAULT_POST_HORIZON, DEFAULT_TRIALS,
};
use crate::{AlarmEvent, Detector, Error, Result};

pub const EXIT_NO_ALARM: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ALARM: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kcusum", version, about = "CUSUM and kernel CUSUM change detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a detector over a stream file or standard input.
    Detect(DetectArgs),
    /// Monte Carlo evaluation of a detector.
    Eval(EvalArgs),
    /// Tabulate the closed-form bounds over a grid.
    Bounds(BoundsArgs),
    /// Generate a synthetic stream with one change.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Cusum,
    Kcusum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DetectorArgs {
    #[arg(long, value_enum, default_value_t = DetectorKind::Kcusum)]
    pub detector: DetectorKind,
    /// Alarm threshold.
    #[arg(long)]
    pub h: f64,
    /// Drift subtracted from each KCUSUM increment.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Gaussian kernel bandwidth.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth: f64,
    /// Gaussian kernel amplitude, equal to its sup norm.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
}

/// Isotropic normal pre- and post-change regimes; the CUSUM model uses
/// the same parameters.
#[derive(Clone, Debug, Args, Serialize)]
pub struct RegimeArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub pre_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pre_var: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub post_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub post_var: f64,
}

impl RegimeArgs {
    fn pre(&self) -> Result<Distribution> {
        Distribution::iso_normal(self.dim, self.pre_mean, self.pre_var)
    }

    fn post(&self) -> Result<Distribution> {
        Distribution::iso_normal(self.dim, self.post_mean, self.post_var)
    }

    fn model(&self) -> GaussianModelSpec {
        GaussianModelSpec { mean0: self.pre_mean, var0: self.pre_var, mean1: self.post_mean, var1: self.post_var }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Stream file, or `-` for standard input.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Reference pool file (required for kcusum).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Observation dimension; inferred from the reference or first row if omitted.
    #[arg(long)]
    pub dim: Option<usize>,
    /// CUSUM model parameters.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mean0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub var0: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mean1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub var1: f64,
    /// Keep running after alarms, rebuilding the reference from new data.
    #[arg(long)]
    pub reset: bool,
    #[arg(long, default_value_t = DEFAULT_RESET_POOL_SIZE)]
    pub reset_pool_size: usize,
    /// Emit only alarm records.
    #[arg(long)]
    pub alarms_only: bool,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    pub format: Format,
    /// Output file; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "KCUSUM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub mode: EvalMode,
}

#[derive(Debug, Subcommand)]
pub enum EvalMode {
    /// Run length to false alarm on no-change streams.
    Arl(EvalCommon),
    /// Detection delay on streams with a change.
    Esadd(EvalCommon),
    /// Threshold, delay bound and measured delay per false-alarm level.
    Tradeoff(TradeoffArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvalCommon {
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub regimes: RegimeArgs,
    /// Add N(0, 1) noise to every generated observation.
    #[arg(long)]
    pub noise_mask: bool,
    /// Fixed base stream, noise-masked per trial instead of generated data.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Shared reference pool file; otherwise a pool is drawn per trial.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pub reference_size: usize,
    #[arg(long, default_value_t = 200)]
    pub change_time: u64,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    /// Stream length for `arl`, post-change length for `esadd`.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long, env = "KCUSUM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// JSON report file; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-trial CSV file.
    #[arg(long)]
    pub trials_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TradeoffArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Squared MMD between the pre- and post-change regimes.
    #[arg(long)]
    pub dk_sq: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 100.0, 1000.0, 10000.0])]
    pub levels: Vec<f64>,
    /// Only tabulate the bounds, skip the simulation.
    #[arg(long)]
    pub no_measure: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BoundsArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub h: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub delta: Vec<f64>,
    #[arg(long)]
    pub k_inf: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub dk_sq: Vec<f64>,
    /// KL divergence of the CUSUM model; adds CUSUM columns.
    #[arg(long, requires = "second_moment")]
    pub kl: Option<f64>,
    #[arg(long, requires = "kl")]
    pub second_moment: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    pub regimes: RegimeArgs,
    #[arg(long)]
    pub change_time: u64,
    #[arg(long)]
    pub length: u64,
    #[arg(long, env = "KCUSUM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Stream file; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write this many pre-change draws to `--reference`.
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pub reference_size: usize,
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_NO_ALARM;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            report_error("usage", first);
            return EXIT_ERROR;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            EXIT_ERROR
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let line = json!({ "error": kind, "message": message });
    let _ = writeln!(io::stderr().lock(), "{line}");
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Detect(a) => cmd_detect(&a),
        Command::Eval(a) => match a.mode {
            EvalMode::Arl(c) => cmd_eval(&c, false),
            EvalMode::Esadd(c) => cmd_eval(&c, true),
            EvalMode::Tradeoff(t) => cmd_tradeoff(&t),
        },
        Command::Bounds(a) => cmd_bounds(&a),
        Command::Gen(a) => cmd_gen(&a),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    Ok(if path == Path::new("-") { Box::new(io::stdin().lock()) } else { Box::new(BufReader::new(File::open(path)?)) })
}

fn kernel_of(d: &DetectorArgs, dim: usize) -> Result<GaussianKernel> {
    GaussianKernel::scaled(dim, d.bandwidth, d.amplitude)
}

#[allow(clippy::large_enum_variant)]
enum Running {
    Cusum(Cusum),
    Kcusum(Kcusum<GaussianKernel>),
    Resetting(ResettingKcusum<GaussianKernel>),
}

impl Running {
    fn observe(&mut self, x: &[f64]) -> Result<Option<AlarmEvent>> {
        match self {
            Running::Cusum(d) => d.observe(x),
            Running::Kcusum(d) => d.observe(x),
            Running::Resetting(d) => d.observe(x),
        }
    }

    fn statistic(&self) -> f64 {
        match self {
            Running::Cusum(d) => d.statistic(),
            Running::Kcusum(d) => d.statistic(),
            Running::Resetting(d) => d.statistic(),
        }
    }
}

#[derive(Serialize)]
struct DetectEcho<'a> {
    command: &'static str,
    args: &'a DetectArgs,
    reference_rows: Option<usize>,
    reference_draw_seed: Option<u64>,
}

fn validate_threshold(d: &DetectorArgs) -> Result<()> {
    if !(d.h.is_finite() && d.h >= 0.0) {
        return Err(Error::invalid(format!("h must be finite and >= 0, got {}", d.h)));
    }
    if !(d.delta.is_finite() && d.delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be finite and >= 0, got {}", d.delta)));
    }
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> Result<i32> {
    validate_threshold(&a.detector)?;
    let (mut det, dim, reference_rows, draw_seed) = match a.detector.detector {
        DetectorKind::Cusum => {
            if a.reset {
                return Err(Error::invalid("--reset is only available for kcusum"));
            }
            if a.dim.is_some_and(|d| d != 1) {
                return Err(Error::invalid("the Gaussian CUSUM model needs 1-dimensional observations"));
            }
            let model = LikelihoodModel::gaussian(a.mean0, a.var0, a.mean1, a.var1)?;
            (Running::Cusum(Cusum::new(model, a.detector.h)?), 1, None, None)
        }
        DetectorKind::Kcusum => {
            let path = a.reference.as_ref().ok_or_else(|| Error::invalid("kcusum needs --reference"))?;
            let draw_seed = derive_seed(a.seed, tag::REFERENCE_DRAWS, 0);
            let pool = load_reference(path, a.dim, draw_seed)?;
            let dim = pool.dimension();
            let rows = pool.len();
            let kernel = kernel_of(&a.detector, dim)?;
            let det = if a.reset {
                Running::Resetting(ResettingKcusum::new(
                    a.detector.h,
                    a.detector.delta,
                    kernel,
                    pool,
                    a.reset_pool_size,
                )?)
            } else {
                Running::Kcusum(Kcusum::new(a.detector.h, a.detector.delta, kernel, pool)?)
            };
            (det, dim, Some(rows), Some(draw_seed))
        }
    };

    let input = open_input(&a.input)?;
    let mut out = open_output(a.output.as_deref())?;
    let echo = serde_json::to_string(&DetectEcho {
        command: "detect",
        args: a,
        reference_rows,
        reference_draw_seed: draw_seed,
    })?;
    match a.format {
        Format::Jsonl => writeln!(out, "{{\"type\":\"config\",\"config\":{echo}}}")?,
        Format::Csv => writeln!(out, "# config: {echo}\ntype,n,statistic")?,
    }

    let mut alarms = 0u64;
    let mut n = 0u64;
    for row in read_stream(input, Some(dim)) {
        let x = row?;
        n += 1;
        let alarm = det.observe(&x)?;
        if !a.alarms_only {
            write_record(&mut out, a.format, "step", n, det.statistic())?;
        }
        if let Some(ev) = alarm {
            alarms += 1;
            write_record(&mut out, a.format, "alarm", ev.time, ev.statistic)?;
            if !a.reset {
                break;
            }
        }
    }
    out.flush()?;
    log::info!("processed {n} observations, {alarms} alarm(s)");
    Ok(if alarms > 0 { EXIT_ALARM } else { EXIT_NO_ALARM })
}

fn write_record(out: &mut dyn Write, format: Format, kind: &str, n: u64, stat: f64) -> Result<()> {
    match format {
        Format::Jsonl => writeln!(out, "{{\"type\":\"{kind}\",\"n\":{n},\"statistic\":{}}}", json_f64(stat))?,
        Format::Csv => writeln!(out, "{kind},{n},{}", format_value(stat))?,
    }
    Ok(())
}

fn json_f64(v: f64) -> String {
    serde_json::Value::from(v).to_string()
}

fn eval_inputs(c: &EvalCommon) -> Result<(DetectorConfig, StreamSource)> {
    validate_threshold(&c.detector)?;
    let dim = c.regimes.dim;
    let source = match &c.base {
        Some(path) => {
            let rows = crate::data::open_stream(path, Some(dim))?.collect::<Result<Vec<_>>>()?;
            StreamSource::Masked { base: BaseStream::new(rows)? }
        }
        None => StreamSource::Normal { pre: c.regimes.pre()?, post: c.regimes.post()?, noise_mask: c.noise_mask },
    };
    let detector = match c.detector.detector {
        DetectorKind::Cusum => DetectorConfig::Cusum { model: c.regimes.model(), h: c.detector.h },
        DetectorKind::Kcusum => {
            let reference = match &c.reference {
                Some(p) => ReferenceSource::Fixed { pool: load_reference(p, Some(dim), c.seed)? },
                None => ReferenceSource::Generated { size: c.reference_size },
            };
            DetectorConfig::Kcusum(KcusumConfig {
                h: c.detector.h,
                delta: c.detector.delta,
                kernel: kernel_of(&c.detector, dim)?,
                reference,
            })
        }
    };
    Ok((detector, source))
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::invalid("--threads must be >= 1")),
        Some(t) => with_threads(t, f),
        None => Ok(f()),
    }
}

fn cmd_eval(c: &EvalCommon, esadd: bool) -> Result<i32> {
    let (detector, source) = eval_inputs(c)?;
    let report: EvalReport = in_pool(c.threads, || {
        if esadd {
            let horizon = c.horizon.unwrap_or(DEFAULT_POST_HORIZON);
            estimate_esadd(&detector, &source, c.change_time, c.trials, horizon, c.seed)
        } else {
            estimate_arl2fa(&detector, &source, c.trials, c.horizon.unwrap_or(DEFAULT_ARL_HORIZON), c.seed)
        }
    })??;
    let mut out = open_output(c.output.as_deref())?;
    writeln!(out, "{}", report.to_json()?)?;
    out.flush()?;
    if let Some(p) = &c.trials_csv {
        std::fs::write(p, report.trials_csv()?)?;
    }
    Ok(EXIT_NO_ALARM)
}

fn cmd_tradeoff(t: &TradeoffArgs) -> Result<i32> {
    let c = &t.common;
    let (detector, source) = eval_inputs(c)?;
    let DetectorConfig::Kcusum(kc) = detector else {
        return Err(Error::invalid("tradeoff curves are computed for kcusum"));
    };
    let measure = (!t.no_measure).then(|| TradeoffMeasurement {
        source,
        change_time: c.change_time,
        trials: c.trials,
        post_horizon: c.horizon.unwrap_or(DEFAULT_POST_HORIZON),
        seed: c.seed,
    });
    let rows = in_pool(c.threads, || tradeoff_curve(&kc, t.dk_sq, &t.levels, measure.as_ref()))??;
    let mut out = open_output(c.output.as_deref())?;
    writeln!(out, "# config: {}", serde_json::to_string(t)?)?;
    let mut w = csv::Writer::from_writer(&mut out);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    drop(w);
    out.flush()?;
    Ok(EXIT_NO_ALARM)
}

fn cmd_bounds(a: &BoundsArgs) -> Result<i32> {
    let mut rows = Vec::new();
    for &delta in &a.delta {
        let rate = kcusum_rate(delta, a.k_inf)?;
        for &dk_sq in &a.dk_sq {
            for &h in &a.h {
                let mut row = vec![h, delta, a.k_inf, dk_sq, rate];
                row.push(kcusum_arl2fa_lower(h, delta, a.k_inf)?);
                row.push(kcusum_esadd_upper(h, delta, a.k_inf, dk_sq)?);
                if let (Some(kl), Some(m2)) = (a.kl, a.second_moment) {
                    row.push(cusum_arl2fa_lower(h)?);
                    row.push(cusum_esadd_bound(h, kl, m2)?);
                }
                rows.push(row);
            }
        }
    }
    let mut out = open_output(a.output.as_deref())?;
    writeln!(out, "# config: {}", serde_json::to_string(a)?)?;
    let mut header = "h,delta,k_inf,dk_sq,rate,kcusum_arl2fa_lower,kcusum_esadd_upper".to_string();
    if a.kl.is_some() {
        header.push_str(",cusum_arl2fa_lower,cusum_esadd_bound");
    }
    writeln!(out, "{header}")?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(EXIT_NO_ALARM)
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let spec = ChangeSpec {
        pre: a.regimes.pre()?,
        post: a.regimes.post()?,
        change_time: a.change_time,
        length: a.length,
        seed: derive_seed(a.seed, tag::STREAM, 0),
    };
    spec.validate()?;
    let echo = serde_json::to_string(&json!({ "command": "gen", "args": a, "stream_seed": spec.seed }))?;
    let out = open_output(a.output.as_deref())?;
    write_stream(out, &[format!("config: {echo}")], ChangeStream::from_spec(&spec)?)?;
    if let Some(path) = &a.reference {
        let pool_seed = derive_seed(a.seed, tag::REFERENCE_POOL, 0);
        let pool = ReferencePool::from_distribution(&spec.pre, a.reference_size, pool_seed, 0)?;
        let rows = (0..pool.len()).map(|i| pool.get(i).to_vec());
        let comment = format!("reference: {} draws from the pre-change regime, sample seed {pool_seed}", pool.len());
        write_stream(BufWriter::new(File::create(path)?), &[comment], rows)?;
    }
    Ok(EXIT_NO_ALARM)
}
