//! Workload runners, the runtime-vs-size scaling harness and its CSV output.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use m3_core::generator::GeneratorSpec;
use m3_core::kmeans::{kmeans_train, KmeansInit, KmeansModel, KmeansOptions};
use m3_core::optim::{IterationRecord, LbfgsOptions};
use m3_core::softmax::{one_vs_rest, train_logreg_observed, LogregConfig, LogregFit, DEFAULT_LAMBDA};
use m3_core::ChunkPlan;

use crate::corpus::generate_dataset;
use crate::error::{Error, Result};
use crate::exec::ThreadPoolExecutor;
use crate::mmatrix::{Advice, LabelFile, MappedMatrix, Mode};

pub const CSV_HEADER: &str =
    "algo,rows,cols,data_bytes,mode,iterations,wall_ms,load_ms,metric_name,metric_value,chunk_rows,threads,seed,timestamp";

pub const TRACE_HEADER: &str = "iter,f,grad_inf_norm,step,wall_ms,evaluations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algo {
    Logreg,
    Kmeans,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Logreg => "logreg",
            Algo::Kmeans => "kmeans",
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(Algo::Logreg),
            "kmeans" => Ok(Algo::Kmeans),
            _ => Err(Error::Csv(format!("unknown algo {s:?}"))),
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "mapped" => Ok(Mode::Mapped),
        "inram" => Ok(Mode::InRam),
        _ => Err(Error::Csv(format!("unknown mode {s:?}"))),
    }
}

/// One measurement of the scaling experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub algo: Algo,
    pub rows: u64,
    pub cols: u64,
    pub data_bytes: u64,
    pub mode: Mode,
    pub iterations: usize,
    /// Training loop only.
    pub wall_ms: f64,
    /// In-RAM materialization; 0 for mapped runs.
    pub load_ms: f64,
    pub metric_name: String,
    pub metric_value: f64,
    pub chunk_rows: usize,
    pub threads: usize,
    pub seed: u64,
    /// ISO-8601 UTC.
    pub timestamp: String,
}

/// 17 significant digits, enough to round-trip any binary64.
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

impl BenchRecord {
    pub fn to_csv_line(&self) -> String {
        let mut line = String::with_capacity(160);
        let _ = write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.algo.as_str(),
            self.rows,
            self.cols,
            self.data_bytes,
            self.mode.as_str(),
            self.iterations,
            real(self.wall_ms),
            real(self.load_ms),
            self.metric_name,
            real(self.metric_value),
            self.chunk_rows,
            self.threads,
            self.seed,
            self.timestamp
        );
        line
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
        if f.len() != 14 {
            return Err(Error::Csv(format!("expected 14 fields, found {}", f.len())));
        }
        fn num<T: FromStr>(s: &str, name: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Csv(format!("bad {name} {s:?}")))
        }
        Ok(Self {
            algo: f[0].parse()?,
            rows: num(f[1], "rows")?,
            cols: num(f[2], "cols")?,
            data_bytes: num(f[3], "data_bytes")?,
            mode: parse_mode(f[4])?,
            iterations: num(f[5], "iterations")?,
            wall_ms: num(f[6], "wall_ms")?,
            load_ms: num(f[7], "load_ms")?,
            metric_name: f[8].to_owned(),
            metric_value: num(f[9], "metric_value")?,
            chunk_rows: num(f[10], "chunk_rows")?,
            threads: num(f[11], "threads")?,
            seed: num(f[12], "seed")?,
            timestamp: f[13].to_owned(),
        })
    }
}

pub fn now_utc() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Appends records to `path`, writing the header only if the file is empty.
/// An existing file with a different first line is rejected untouched.
pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();

    let mut out = String::new();
    if len == 0 {
        out.push_str(CSV_HEADER);
        out.push('\n');
    } else {
        file.seek(SeekFrom::Start(0)).map_err(|e| Error::io(path, e))?;
        let mut first = String::new();
        BufReader::new(&file).read_line(&mut first).map_err(|e| Error::io(path, e))?;
        if first.trim_end_matches(['\r', '\n']) != CSV_HEADER {
            return Err(Error::Csv(format!("{}: existing file has a different header", path.display())));
        }
        if !first.ends_with('\n') {
            // Header without a trailing newline; terminate it before appending.
            out.push('\n');
        }
    }
    for r in records {
        if r.metric_name.contains(',') || r.timestamp.contains(',') {
            return Err(Error::Csv("fields may not contain commas".into()));
        }
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads every record from a CSV written by [`emit_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        None => return Ok(Vec::new()),
        Some(_) => return Err(Error::Csv(format!("{}: unexpected header", path.display()))),
    }
    lines.filter(|l| !l.is_empty()).map(BenchRecord::parse_csv_line).collect()
}

/// Settings shared by every workload.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub mode: Mode,
    pub plan: ChunkPlan,
    pub seed: u64,
    pub advise: Option<Advice>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { mode: Mode::Mapped, plan: ChunkPlan::default(), seed: 0, advise: None }
    }
}

#[derive(Debug, Clone)]
pub struct LogregJob {
    pub data: PathBuf,
    pub labels: PathBuf,
    /// Use only the first `rows` rows.
    pub rows: Option<usize>,
    pub iterations: usize,
    pub lambda: f64,
    /// Train class `d` against the rest instead of the multiclass model.
    pub binary: Option<u8>,
    pub feature_scale: f64,
    /// Stop early once the gradient infinity norm drops below this.
    pub tolerance: Option<f64>,
}

impl LogregJob {
    pub fn new(data: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            labels: labels.into(),
            rows: None,
            iterations: 10,
            lambda: DEFAULT_LAMBDA,
            binary: None,
            feature_scale: 1.0,
            tolerance: None,
        }
    }
}

pub struct LogregRun {
    pub record: BenchRecord,
    pub fit: LogregFit,
    /// Milliseconds since training start, one per trace entry.
    pub iteration_ms: Vec<f64>,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn open_data(path: &Path, rows: Option<usize>, run: &RunConfig) -> Result<MappedMatrix> {
    let matrix = MappedMatrix::open(path, run.mode, rows)?;
    if let Some(advice) = run.advise {
        matrix.advise(advice);
    }
    Ok(matrix)
}

fn data_bytes(m: &MappedMatrix) -> u64 {
    (m.rows() * m.cols()) as u64 * 8
}

/// Trains logistic regression and measures the training loop alone.
pub fn run_logreg(job: &LogregJob, run: &RunConfig, exec: &ThreadPoolExecutor) -> Result<LogregRun> {
    let load = Instant::now();
    let matrix = open_data(&job.data, job.rows, run)?;
    let labels = LabelFile::open(&job.labels, run.mode, job.rows)?;
    let load_ms = if matrix.is_mapped() { 0.0 } else { elapsed_ms(load) };

    let (label_slice, num_classes);
    let binary_labels;
    match job.binary {
        Some(d) => {
            if usize::from(d) >= labels.num_classes() {
                return Err(Error::Usage(format!("--binary {d} is not a class of {}", job.labels.display())));
            }
            binary_labels = one_vs_rest(labels.as_slice(), d);
            label_slice = binary_labels.as_slice();
            num_classes = 2;
        }
        None => {
            label_slice = labels.as_slice();
            num_classes = labels.num_classes();
        }
    }

    let config = LogregConfig { lambda: job.lambda, feature_scale: job.feature_scale, plan: run.plan };
    let opts = match job.tolerance {
        Some(tol) => LbfgsOptions { max_iterations: job.iterations, grad_tolerance: tol, ..LbfgsOptions::default() },
        None => LbfgsOptions::benchmark(job.iterations),
    };

    let mut iteration_ms = Vec::with_capacity(job.iterations);
    let start = Instant::now();
    let fit = train_logreg_observed(
        matrix.view(),
        label_slice,
        num_classes,
        &config,
        &opts,
        exec,
        |_: &IterationRecord| iteration_ms.push(elapsed_ms(start)),
    )?;
    let wall_ms = elapsed_ms(start);

    let record = BenchRecord {
        algo: Algo::Logreg,
        rows: matrix.rows() as u64,
        cols: matrix.cols() as u64,
        data_bytes: data_bytes(&matrix),
        mode: matrix.mode(),
        iterations: fit.report.trace.len(),
        wall_ms,
        load_ms,
        metric_name: "loss".into(),
        metric_value: fit.report.value,
        chunk_rows: run.plan.chunk_rows(),
        threads: exec.threads(),
        seed: run.seed,
        timestamp: now_utc(),
    };
    Ok(LogregRun { record, fit, iteration_ms })
}

#[derive(Debug, Clone)]
pub struct KmeansJob {
    pub data: PathBuf,
    pub rows: Option<usize>,
    pub k: usize,
    pub iterations: usize,
    pub init: KmeansInit,
    pub tolerance: Option<f64>,
}

impl KmeansJob {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self { data: data.into(), rows: None, k: 5, iterations: 10, init: KmeansInit::Uniform, tolerance: None }
    }
}

pub struct KmeansRun {
    pub record: BenchRecord,
    pub model: KmeansModel,
}

pub fn run_kmeans(job: &KmeansJob, run: &RunConfig, exec: &ThreadPoolExecutor) -> Result<KmeansRun> {
    let load = Instant::now();
    let matrix = open_data(&job.data, job.rows, run)?;
    let load_ms = if matrix.is_mapped() { 0.0 } else { elapsed_ms(load) };

    let opts = KmeansOptions {
        k: job.k,
        iterations: job.iterations,
        seed: run.seed,
        init: job.init,
        tolerance: job.tolerance,
        plan: run.plan,
    };
    let start = Instant::now();
    let model = kmeans_train(matrix.view(), &opts, exec)?;
    let wall_ms = elapsed_ms(start);

    let record = BenchRecord {
        algo: Algo::Kmeans,
        rows: matrix.rows() as u64,
        cols: matrix.cols() as u64,
        data_bytes: data_bytes(&matrix),
        mode: matrix.mode(),
        iterations: model.rounds,
        wall_ms,
        load_ms,
        metric_name: "inertia".into(),
        metric_value: model.inertia,
        chunk_rows: run.plan.chunk_rows(),
        threads: exec.threads(),
        seed: run.seed,
        timestamp: now_utc(),
    };
    Ok(KmeansRun { record, model })
}

/// Writes an optimizer trace with per-iteration timestamps.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[IterationRecord], iteration_ms: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (t, ms) in trace.iter().zip(iteration_ms) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t.iteration,
            real(t.value),
            real(t.grad_inf_norm),
            real(t.step),
            real(*ms),
            t.evaluations
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A sweep over dataset sizes, all prefixes of one generated dataset.
#[derive(Debug, Clone)]
pub struct ScalingSpec {
    pub algo: Algo,
    /// Ascending row counts.
    pub rows: Vec<u64>,
    /// Generator settings; `rows` is replaced by the largest size.
    pub base: GeneratorSpec,
    pub dir: PathBuf,
    pub iterations: usize,
    pub k: usize,
    pub lambda: f64,
}

#[derive(Debug, Default)]
pub struct ScalingOutcome {
    pub records: Vec<BenchRecord>,
    /// Sizes that failed, with the error.
    pub failures: Vec<(u64, Error)>,
}

/// Cache file names for a generated dataset. Every parameter that affects the
/// bytes is in the name, so an existing file can be reused as-is.
pub fn dataset_paths(dir: &Path, spec: &GeneratorSpec) -> (PathBuf, PathBuf) {
    let stem = format!(
        "m3-r{}-c{}-k{}-s{}-n{}",
        spec.rows, spec.cols, spec.num_classes, spec.seed, spec.noise_sigma
    );
    (dir.join(format!("{stem}.m3mx")), dir.join(format!("{stem}.m3lb")))
}

/// Generates the dataset described by `spec` in `dir` unless a complete
/// copy is already there.
pub fn ensure_dataset(dir: &Path, spec: &GeneratorSpec, exec: &ThreadPoolExecutor) -> Result<(PathBuf, PathBuf)> {
    let (data, labels) = dataset_paths(dir, spec);
    let cached = MappedMatrix::open_mapped(&data, false)
        .map(|m| m.rows() as u64 == spec.rows && m.cols() == spec.cols)
        .unwrap_or(false)
        && LabelFile::open(&labels, Mode::Mapped, None).is_ok();
    if !cached {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        generate_dataset(spec, &data, &labels, exec)?;
    }
    Ok((data, labels))
}

/// Runs the benchmark once per size. Failures are collected per size and the
/// sweep continues.
pub fn run_scaling(spec: &ScalingSpec, run: &RunConfig, exec: &ThreadPoolExecutor) -> Result<ScalingOutcome> {
    if spec.rows.is_empty() || spec.rows.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("--rows must be a non-empty ascending list".into()));
    }
    let largest = *spec.rows.last().unwrap();
    let gen_spec = GeneratorSpec { rows: largest, ..spec.base };
    let (data, labels) = ensure_dataset(&spec.dir, &gen_spec, exec)?;

    let mut outcome = ScalingOutcome::default();
    for &rows in &spec.rows {
        let limit = Some(rows as usize);
        let result = match spec.algo {
            Algo::Logreg => {
                let job = LogregJob {
                    rows: limit,
                    iterations: spec.iterations,
                    lambda: spec.lambda,
                    ..LogregJob::new(&data, &labels)
                };
                run_logreg(&job, run, exec).map(|r| r.record)
            }
            Algo::Kmeans => {
                let job = KmeansJob { rows: limit, k: spec.k, iterations: spec.iterations, ..KmeansJob::new(&data) };
                run_kmeans(&job, run, exec).map(|r| r.record)
            }
        };
        match result {
            Ok(record) => outcome.records.push(record),
            Err(e) => outcome.failures.push((rows, e)),
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination.
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit { slope, intercept, r2 })
}
