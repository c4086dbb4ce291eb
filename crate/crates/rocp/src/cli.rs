//! The `rocp` command line tool.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rocp_core::baselines::{cp_als, AlsConfig};
use rocp_core::cprand::{cprand_decompose, CprandConfig};
use rocp_core::online::{PInit, Rocp};
use rocp_core::synth::{gen_synthetic, split_stream};

use crate::bench::{run_benchmark, Algorithm, BenchConfig, DataSource, SampleCount, Stopping, THREADS_ENV};
use crate::error::{Result, RocpError};
use crate::io as files;
use crate::presets::{preset, PRESETS};

#[derive(Debug, Parser)]
#[command(name = "rocp", version, about = "Streaming CP decomposition with sampled least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic low-rank tensor with Gaussian interference.
    Gen(GenArgs),
    /// Compare streaming algorithms over repeated trials.
    Bench(BenchArgs),
    /// One-shot CP decomposition of a tensor file.
    Decompose(DecomposeArgs),
    /// Stream a tensor file through the randomized online method.
    Stream(StreamArgs),
}

/// Interference level in dB; `none` for noiseless data.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Sir(Option<f64>);

fn parse_sir(s: &str) -> std::result::Result<Sir, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Sir(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Sir(Some(v))),
        _ => Err(format!("expected a finite dB value or `none`, got `{s}`")),
    }
}

fn parse_samples(s: &str) -> std::result::Result<SampleCount, String> {
    s.parse().map_err(|e: RocpError| e.to_string())
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: RocpError| e.to_string())
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Extents, e.g. `30,30,30,100`.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long)]
    rank: usize,
    /// Signal-to-interference ratio in dB, or `none`.
    #[arg(long, default_value = "20", value_parser = parse_sir)]
    sir_db: Sir,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the planted factors.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Named shape providing dims, rank and batch size.
    #[arg(long, conflicts_with = "input")]
    preset: Option<String>,
    /// Print the available presets and exit.
    #[arg(long)]
    list_presets: bool,
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Benchmark this tensor file instead of synthetic data.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    /// Sampled columns per factor update, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_samples)]
    samples: SampleCount,
    #[arg(long, default_value_t = 0.2)]
    init_frac: f64,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm,
          default_value = "rocp,online_full,batch_cold,batch_hot")]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "20", value_parser = parse_sir)]
    sir_db: Sir,
    /// Draw one synthetic tensor and reuse it in every trial.
    #[arg(long)]
    shared_data: bool,
    #[arg(long, default_value_t = 1e-4)]
    rocp_tol: f64,
    #[arg(long, default_value_t = 100)]
    rocp_max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    online_tol: f64,
    #[arg(long, default_value_t = 100)]
    online_max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    als_tol: f64,
    #[arg(long, default_value_t = 50)]
    als_max_iters: usize,
    /// Maximum number of trials run concurrently.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Per-trial report with mean and std rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Wall-clock time of every update.
    #[arg(long)]
    series_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DecomposeAlgo {
    #[value(name = "cp-als", alias = "cp_als", alias = "als")]
    CpAls,
    Cprand,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "cp-als")]
    algo: DecomposeAlgo,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Defaults to 50 for CP-ALS and 100 for CPRAND.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value = "auto", value_parser = parse_samples)]
    samples: SampleCount,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the factor matrices here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value = "auto", value_parser = parse_samples)]
    samples: SampleCount,
    #[arg(long, default_value_t = 0.2)]
    init_frac: f64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stopping tolerance of the initial decomposition.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Per-update timings: `update, slices, seconds`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the final factor matrices here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the final complementary matrices here.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error(transparent)]
    Run(#[from] RocpError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(e) if !e.use_stderr() => 0,
            Self::Usage(_) => 2,
            Self::Run(e) => e.exit_code(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// printing results to standard output.
pub fn run<I, T>(args: I) -> std::result::Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_to(args, std::io::stdout().lock())
}

/// As [`run`], writing results to `out`.
pub fn run_to<I, T, W>(args: I, mut out: W) -> std::result::Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Gen(a) => gen(a, &mut out)?,
        Command::Bench(a) => bench(a, &mut out)?,
        Command::Decompose(a) => decompose(a, &mut out)?,
        Command::Stream(a) => stream(a, &mut out)?,
    }
    Ok(())
}

fn config(msg: impl Into<String>) -> RocpError {
    RocpError::Config(msg.into())
}

fn gen(a: GenArgs, out: &mut impl Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (x, truth) = gen_synthetic(&a.dims, a.rank, a.sir_db.0, &mut rng)?;
    files::save_tensor(&a.out, &x)?;
    if let Some(path) = &a.truth {
        files::save_model(path, &truth)?;
    }
    writeln!(out, "wrote {:?} tensor to {}", x.dims(), a.out.display())?;
    Ok(())
}

fn bench(a: BenchArgs, out: &mut impl Write) -> Result<()> {
    if a.list_presets {
        for p in PRESETS {
            writeln!(out, "{:<22} dims {:?} rank {} batch {}", p.name, p.dims, p.rank, p.batch_size)?;
        }
        return Ok(());
    }
    let named = match &a.preset {
        Some(name) => Some(preset(name).ok_or_else(|| config(format!("unknown preset `{name}`")))?),
        None => None,
    };
    let data = match &a.input {
        Some(path) => DataSource::Tensor(Arc::new(files::load_tensor(path)?)),
        None if a.shared_data => DataSource::Shared,
        None => DataSource::PerTrial,
    };
    let dims = match (&a.dims, named, &data) {
        (Some(d), _, _) => d.clone(),
        (None, Some(p), _) => p.dims.to_vec(),
        (None, None, DataSource::Tensor(t)) => t.dims().to_vec(),
        (None, None, _) => return Err(config("one of --dims, --preset or --input is required")),
    };
    let rank = a
        .rank
        .or(named.map(|p| p.rank))
        .ok_or_else(|| config("--rank is required unless a preset supplies it"))?;

    let mut cfg = BenchConfig::new(dims, rank);
    cfg.samples = a.samples;
    cfg.init_fraction = a.init_frac;
    cfg.batch_size = a.batch.or(named.map(|p| p.batch_size)).unwrap_or(1);
    cfg.algorithms = dedup(a.algorithms);
    cfg.trials = a.trials;
    cfg.seed = a.seed;
    cfg.sir_db = a.sir_db.0;
    cfg.rocp = Stopping { tol: a.rocp_tol, max_iters: a.rocp_max_iters };
    cfg.online_init = Stopping { tol: a.online_tol, max_iters: a.online_max_iters };
    cfg.batch = Stopping { tol: a.als_tol, max_iters: a.als_max_iters };
    cfg.data = data;
    cfg.threads = a.threads;
    cfg.csv = a.csv;
    cfg.series_csv = a.series_csv;

    let report = run_benchmark(&cfg)?;
    write!(out, "{}", report.summary())?;
    Ok(())
}

fn dedup(algs: Vec<Algorithm>) -> Vec<Algorithm> {
    let mut seen = Vec::with_capacity(algs.len());
    for a in algs {
        if !seen.contains(&a) {
            seen.push(a);
        }
    }
    seen
}

fn decompose(a: DecomposeArgs, out: &mut impl Write) -> Result<()> {
    let x = files::load_tensor(&a.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let clock = Instant::now();
    let (model, iterations) = match a.algo {
        DecomposeAlgo::CpAls => {
            let cfg = AlsConfig::new(a.rank).with_tol(a.tol).with_max_iters(a.max_iters.unwrap_or(50));
            let res = cp_als(&x, &cfg, None, &mut rng)?;
            (res.model, res.sweeps)
        }
        DecomposeAlgo::Cprand => {
            let cfg = CprandConfig::new(a.rank)
                .with_samples(a.samples.resolve(a.rank))
                .with_tol(a.tol)
                .with_max_iters(a.max_iters.unwrap_or(100));
            let res = cprand_decompose(&x, &cfg, &mut rng)?;
            (res.model, res.iterations)
        }
    };
    let seconds = clock.elapsed().as_secs_f64();
    let fitness = model.fitness(&x)?;
    if let Some(path) = &a.out {
        files::save_model(path, &model)?;
    }
    writeln!(out, "fitness {fitness:.6} iterations {iterations} seconds {seconds:.6}")?;
    Ok(())
}

fn stream(a: StreamArgs, out: &mut impl Write) -> Result<()> {
    let x = files::load_tensor(&a.input)?;
    let (x_init, batches) = split_stream(&x, a.init_frac, a.batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cfg = CprandConfig::new(a.rank)
        .with_samples(a.samples.resolve(a.rank))
        .with_tol(a.tol)
        .with_max_iters(a.max_iters);

    let clock = Instant::now();
    let init = cprand_decompose(&x_init, &cfg, &mut rng)?;
    let mut rocp = Rocp::from_init(init, PInit::Corrected)?;
    let init_seconds = clock.elapsed().as_secs_f64();

    let mut csv = match &a.csv {
        Some(path) => {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
            w.write_record(["update", "slices", "seconds"])?;
            Some(w)
        }
        None => None,
    };
    let mut stream_seconds = 0.0;
    for (k, b) in batches.iter().enumerate() {
        let t = Instant::now();
        rocp.step(b, &mut rng)?;
        let dt = t.elapsed().as_secs_f64();
        stream_seconds += dt;
        if let Some(w) = csv.as_mut() {
            w.write_record([(k + 1).to_string(), b.last_dim().to_string(), dt.to_string()])?;
        }
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }

    let fitness = rocp.model().fitness(&x)?;
    if let Some(path) = &a.state_out {
        files::save_state(path, rocp.state())?;
    }
    let regularized = rocp.regularized_solves();
    let updates = rocp.updates();
    if let Some(path) = &a.out {
        files::save_model(path, rocp.model())?;
    }
    writeln!(
        out,
        "fitness {fitness:.6} updates {updates} init_seconds {init_seconds:.6} stream_seconds {stream_seconds:.6} regularized {regularized}"
    )?;
    Ok(())
}
