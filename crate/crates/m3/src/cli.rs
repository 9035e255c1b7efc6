//! The `m3` command line tool.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use m3_core::generator::{GeneratorSpec, DEFAULT_CLASSES, DEFAULT_COLS, DEFAULT_NOISE_SIGMA};
use m3_core::kmeans::{KmeansInit, DEFAULT_ITERATIONS, DEFAULT_K};
use m3_core::softmax::DEFAULT_LAMBDA;
use m3_core::{ChunkPlan, DEFAULT_CHUNK_ROWS};

use crate::bench::{
    emit_csv, run_kmeans, run_logreg, run_scaling, write_trace_csv, Algo, BenchRecord, KmeansJob, LogregJob,
    RunConfig, ScalingSpec, CSV_HEADER,
};
use crate::corpus::{describe, generate_dataset, read_header, write_assignments, write_matrix, write_model};
use crate::error::{Error, Result};
use crate::exec::ThreadPoolExecutor;
use crate::memcap::limit_data_segment;
use crate::mmatrix::{Advice, Mode};

/// Out-of-core logistic regression and k-means over memory-mapped matrices
#[derive(Parser, Debug)]
#[command(name = "m3", version, about)]
struct Cli {
    /// Where data lives during training
    #[arg(long, global = true, value_enum, default_value_t = Mode::Mapped)]
    mode: Mode,

    /// Rows per reduction chunk; fixes the floating-point summation order
    #[arg(long, global = true, env = "M3_CHUNK_ROWS", default_value_t = DEFAULT_CHUNK_ROWS,
          value_parser = positive)]
    chunk_rows: usize,

    /// Worker threads [default: available cores]
    #[arg(long, global = true, env = "M3_THREADS", value_parser = positive)]
    threads: Option<usize>,

    /// Seed for dataset generation and k-means initialization
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Append benchmark records to this CSV file
    #[arg(long, global = true, value_name = "PATH")]
    csv: Option<PathBuf>,

    /// Cap the process data segment (heap) at this many MiB before running
    #[arg(long, global = true, value_name = "MIB")]
    mem_cap_mb: Option<u64>,

    /// Access-pattern hint for mapped data
    #[arg(long, global = true, value_enum)]
    advise: Option<Advice>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic digit-like dataset
    Gen(GenArgs),
    /// Train softmax logistic regression with L-BFGS
    TrainLogreg(LogregArgs),
    /// Cluster rows with Lloyd's k-means
    Kmeans(KmeansArgs),
    /// Time one algorithm over several dataset sizes
    BenchScaling(ScalingArgs),
    /// Print the header of a data, label, assignment or model file
    Inspect { path: PathBuf },
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    rows: u64,
    #[arg(long, default_value_t = DEFAULT_COLS)]
    cols: usize,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: u32,
    /// Pixel noise standard deviation
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug)]
struct LogregArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// L-BFGS iterations (accepted updates)
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Train this class against the rest instead of the multiclass model
    #[arg(long, value_name = "CLASS")]
    binary: Option<u8>,
    /// Feature multiplier, e.g. 1/255; off by default
    #[arg(long, value_parser = parse_scale)]
    scale: Option<f64>,
    /// Stop once the gradient infinity norm falls below this
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Per-iteration optimizer trace
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KmeansArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: usize,
    /// k-means++ seeding instead of uniform sampling
    #[arg(long)]
    plusplus: bool,
    /// Stop when the relative inertia change falls below this
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    centroids_out: Option<PathBuf>,
    #[arg(long)]
    assignments_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScalingArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// Ascending, comma-separated row counts
    #[arg(long, value_delimiter = ',', required = true)]
    rows: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_COLS)]
    cols: usize,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: u32,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
    sigma: f64,
    /// Dataset cache directory
    #[arg(long, default_value = "m3-data")]
    dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Accepts a float or a fraction such as `1/255`.
fn parse_scale(s: &str) -> std::result::Result<f64, String> {
    let value = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let d: f64 = d.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            n / d
        }
        None => s.parse().map_err(|_| format!("not a number: {s:?}"))?,
    };
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(format!("scale must be finite and positive, got {s:?}"))
    }
}

/// Runs the tool. Returns 0 on success, 1 on a usage error and 2 when the
/// data or the computation fails.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 1,
                _ => 2,
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(mb) = cli.mem_cap_mb {
        limit_data_segment(mb.saturating_mul(1 << 20))?;
    }
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let exec = ThreadPoolExecutor::new(threads)?;
    let run = RunConfig {
        mode: cli.mode,
        plan: ChunkPlan::new(cli.chunk_rows)?,
        seed: cli.seed,
        advise: cli.advise,
    };

    let records = match cli.command {
        Command::Gen(a) => {
            let spec = GeneratorSpec {
                rows: a.rows,
                cols: a.cols,
                num_classes: a.classes,
                seed: cli.seed,
                noise_sigma: a.sigma,
            };
            spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
            generate_dataset(&spec, &a.out, &a.labels, &exec)?;
            println!("wrote {} and {}", a.out.display(), a.labels.display());
            return Ok(());
        }
        Command::Inspect { path } => {
            println!("{}", describe(&read_header(&path)?));
            return Ok(());
        }
        Command::TrainLogreg(a) => {
            let job = LogregJob {
                iterations: a.iters,
                lambda: a.lambda,
                binary: a.binary,
                feature_scale: a.scale.unwrap_or(1.0),
                tolerance: a.tol,
                ..LogregJob::new(&a.data, &a.labels)
            };
            let out = run_logreg(&job, &run, &exec)?;
            if let Some(path) = &a.model_out {
                write_model(path, &out.fit.model)?;
            }
            if let Some(path) = &a.trace_csv {
                write_trace_csv(path, &out.fit.report.trace, &out.iteration_ms)?;
            }
            eprintln!("termination: {:?}", out.fit.report.termination);
            vec![out.record]
        }
        Command::Kmeans(a) => {
            let job = KmeansJob {
                k: a.k,
                iterations: a.iters,
                init: if a.plusplus { KmeansInit::PlusPlus } else { KmeansInit::Uniform },
                tolerance: a.tol,
                ..KmeansJob::new(&a.data)
            };
            let out = run_kmeans(&job, &run, &exec)?;
            if let Some(path) = &a.centroids_out {
                write_matrix(path, &out.model.centroids, out.model.k, out.model.cols)?;
            }
            if let Some(path) = &a.assignments_out {
                write_assignments(path, &out.model.assignments, out.model.k)?;
            }
            vec![out.record]
        }
        Command::BenchScaling(a) => {
            let spec = ScalingSpec {
                algo: a.algo,
                rows: a.rows,
                base: GeneratorSpec {
                    rows: 0,
                    cols: a.cols,
                    num_classes: a.classes,
                    seed: cli.seed,
                    noise_sigma: a.sigma,
                },
                dir: a.dir,
                iterations: a.iters,
                k: a.k,
                lambda: a.lambda,
            };
            let outcome = run_scaling(&spec, &run, &exec)?;
            print_records(&outcome.records);
            if let Some(path) = &cli.csv {
                emit_csv(&outcome.records, path)?;
            }
            for (rows, e) in &outcome.failures {
                eprintln!("rows={rows}: {e}");
            }
            if !outcome.failures.is_empty() {
                return Err(Error::Sweep { failed: outcome.failures.len(), total: spec.rows.len() });
            }
            return Ok(());
        }
    };

    print_records(&records);
    if let Some(path) = &cli.csv {
        emit_csv(&records, path)?;
    }
    Ok(())
}

fn print_records(records: &[BenchRecord]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{CSV_HEADER}");
    for r in records {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
}
