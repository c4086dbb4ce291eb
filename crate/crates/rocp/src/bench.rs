//! Multi-trial streaming benchmark of the randomized online method against
//! the exact online update and cold/hot batch re-decomposition.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rocp_core::baselines::{batch_cold, batch_hot, cp_als, AlsConfig, OnlineFull};
use rocp_core::cprand::{cprand_decompose, default_sample_count, CprandConfig};
use rocp_core::online::{PInit, Rocp};
use rocp_core::synth::{gen_synthetic, split_stream};
use rocp_core::{DenseTensor, KruskalModel};

use crate::error::{Result, RocpError};

/// Environment variable capping how many trials run at once.
pub const THREADS_ENV: &str = "ROCP_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Rocp,
    OnlineFull,
    BatchCold,
    BatchHot,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Rocp, Self::OnlineFull, Self::BatchCold, Self::BatchHot];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rocp => "rocp",
            Self::OnlineFull => "online_full",
            Self::BatchCold => "batch_cold",
            Self::BatchHot => "batch_hot",
        }
    }

    fn stream_id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = RocpError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| RocpError::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Sample count for the randomized method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SampleCount {
    /// `max(R, ⌈10·R·ln R⌉)`.
    #[default]
    Auto,
    Fixed(usize),
}

impl SampleCount {
    pub fn resolve(self, rank: usize) -> usize {
        match self {
            Self::Auto => default_sample_count(rank),
            Self::Fixed(s) => s,
        }
    }
}

impl FromStr for SampleCount {
    type Err = RocpError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Self::Fixed(n)),
            _ => Err(RocpError::Config(format!("sample count must be `auto` or a positive integer, got `{s}`"))),
        }
    }
}

/// Stopping rule for one iterative solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stopping {
    pub tol: f64,
    pub max_iters: usize,
}

/// Where the benchmarked tensor comes from.
#[derive(Clone, Debug, Default)]
pub enum DataSource {
    /// A fresh synthetic tensor for every trial.
    #[default]
    PerTrial,
    /// One synthetic tensor, drawn from the seed, shared by all trials.
    Shared,
    /// A tensor loaded by the caller; `dims`, `rank` of generation and
    /// `sir_db` are ignored.
    Tensor(Arc<DenseTensor>),
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub samples: SampleCount,
    pub init_fraction: f64,
    pub batch_size: usize,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub seed: u64,
    /// Interference level of the synthetic data; `None` for noiseless.
    pub sir_db: Option<f64>,
    /// Randomized initial decomposition.
    pub rocp: Stopping,
    /// CP-ALS initialisation of the exact online method.
    pub online_init: Stopping,
    /// CP-ALS used by both batch methods.
    pub batch: Stopping,
    pub data: DataSource,
    /// Upper bound on concurrently running trials; `None` reads
    /// `ROCP_THREADS` and falls back to the available parallelism.
    pub threads: Option<usize>,
    pub csv: Option<PathBuf>,
    pub series_csv: Option<PathBuf>,
}

impl BenchConfig {
    /// All four algorithms, 20 % initial data, batch size 1, 10 trials,
    /// 20 dB interference and automatic sample count.
    pub fn new(dims: Vec<usize>, rank: usize) -> Self {
        Self {
            dims,
            rank,
            samples: SampleCount::Auto,
            init_fraction: 0.2,
            batch_size: 1,
            algorithms: Algorithm::ALL.to_vec(),
            trials: 10,
            seed: 0,
            sir_db: Some(20.0),
            rocp: Stopping { tol: 1e-4, max_iters: 100 },
            online_init: Stopping { tol: 1e-8, max_iters: 100 },
            batch: Stopping { tol: 1e-4, max_iters: 50 },
            data: DataSource::PerTrial,
            threads: None,
            csv: None,
            series_csv: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RocpError::Config(msg));
        if !(self.init_fraction > 0.0 && self.init_fraction < 1.0) {
            return bad(format!("init fraction must lie in (0, 1), got {}", self.init_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("at least one trial is required".into());
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.samples == SampleCount::Fixed(0) {
            return bad("sample count must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("thread cap must be positive".into());
        }
        for (name, s) in [("rocp", self.rocp), ("online init", self.online_init), ("batch", self.batch)] {
            if !(s.tol >= 0.0) || s.max_iters == 0 {
                return bad(format!("{name} stopping rule needs tol >= 0 and max_iters >= 1"));
            }
        }
        if let Some(db) = self.sir_db {
            if !db.is_finite() {
                return bad(format!("SIR must be finite, got {db}"));
            }
        }
        match &self.data {
            DataSource::Tensor(t) if t.order() < 2 => bad("tensor must have at least two modes".into()),
            DataSource::Tensor(_) => Ok(()),
            _ if self.dims.len() < 2 => bad(format!("need at least two modes, got dims {:?}", self.dims)),
            _ if self.dims.contains(&0) => bad(format!("zero extent in dims {:?}", self.dims)),
            _ => Ok(()),
        }
    }

    fn thread_cap(&self) -> usize {
        let cap = self.threads.or_else(|| {
            std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
        });
        let cap = cap.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        cap.clamp(1, self.trials)
    }
}

/// One algorithm in one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub algorithm: Algorithm,
    /// Fitness of the final model against the whole tensor.
    pub fitness: f64,
    pub init_seconds: f64,
    pub stream_seconds: f64,
    /// Number of streaming updates (batches).
    pub updates: usize,
    /// Number of temporal slices streamed.
    pub slices: usize,
    /// Wall-clock time of each update.
    pub update_seconds: Vec<f64>,
}

impl TrialRecord {
    pub fn total_seconds(&self) -> f64 {
        self.init_seconds + self.stream_seconds
    }

    pub fn seconds_per_update(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.stream_seconds / self.updates as f64
        }
    }

    pub fn seconds_per_slice(&self) -> f64 {
        if self.slices == 0 {
            0.0
        } else {
            self.stream_seconds / self.slices as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(p) => write!(f, "{:.p$} ± {:.p$}", self.mean, self.std),
            None => write!(f, "{} ± {}", self.mean, self.std),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub fitness: Stats,
    pub init_seconds: Stats,
    pub stream_seconds: Stats,
    pub total_seconds: Stats,
    pub updates: Stats,
    pub seconds_per_update: Stats,
}

impl Aggregate {
    fn from_rows<'a>(algorithm: Algorithm, rows: impl Iterator<Item = &'a TrialRecord>) -> Self {
        let rows: Vec<&TrialRecord> = rows.filter(|r| r.algorithm == algorithm).collect();
        let col = |f: fn(&TrialRecord) -> f64| Stats::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            algorithm,
            trials: rows.len(),
            fitness: col(|r| r.fitness),
            init_seconds: col(|r| r.init_seconds),
            stream_seconds: col(|r| r.stream_seconds),
            total_seconds: col(TrialRecord::total_seconds),
            updates: col(|r| r.updates as f64),
            seconds_per_update: col(TrialRecord::seconds_per_update),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub samples: usize,
    pub batch_size: usize,
    /// Ordered by trial, then by algorithm selection order.
    pub rows: Vec<TrialRecord>,
    /// One entry per selected algorithm.
    pub aggregates: Vec<Aggregate>,
}

const CSV_HEADER: [&str; 7] = [
    "trial",
    "algorithm",
    "fitness",
    "init_seconds",
    "stream_seconds",
    "updates",
    "seconds_per_update",
];

impl BenchReport {
    fn assemble(cfg: &BenchConfig, dims: Vec<usize>, rows: Vec<TrialRecord>) -> Self {
        let aggregates = cfg
            .algorithms
            .iter()
            .map(|&a| Aggregate::from_rows(a, rows.iter()))
            .collect();
        Self {
            dims,
            rank: cfg.rank,
            samples: cfg.samples.resolve(cfg.rank),
            batch_size: cfg.batch_size,
            rows,
            aggregates,
        }
    }

    pub fn rows_for(&self, algorithm: Algorithm) -> impl Iterator<Item = &TrialRecord> {
        self.rows.iter().filter(move |r| r.algorithm == algorithm)
    }

    pub fn aggregate(&self, algorithm: Algorithm) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.algorithm == algorithm)
    }

    /// Aggregates rebuilt from the per-trial rows.
    pub fn recompute_aggregates(&self) -> Vec<Aggregate> {
        self.aggregates
            .iter()
            .map(|a| Aggregate::from_rows(a.algorithm, self.rows.iter()))
            .collect()
    }

    /// Median over trials of `f`.
    pub fn median(&self, algorithm: Algorithm, f: impl Fn(&TrialRecord) -> f64) -> Option<f64> {
        let mut v: Vec<f64> = self.rows_for(algorithm).map(f).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }

    /// Human-readable summary with `mean ± std` columns.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dims {:?}, rank {}, samples {}, batch {}",
            self.dims, self.rank, self.samples, self.batch_size
        );
        let _ = writeln!(
            out,
            "{:<12} {:>6}  {:>22}  {:>26}  {:>26}",
            "algorithm", "trials", "fitness", "total seconds", "seconds per update"
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{:<12} {:>6}  {:>22.4}  {:>26.6}  {:>26.8}",
                a.algorithm.name(),
                a.trials,
                a.fitness,
                a.total_seconds,
                a.seconds_per_update
            );
        }
        out
    }

    /// One row per (trial, algorithm), then a `mean` and a `std` row per
    /// algorithm.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(CSV_HEADER)?;
        for r in &self.rows {
            csv.write_record([
                r.trial.to_string(),
                r.algorithm.to_string(),
                r.fitness.to_string(),
                r.init_seconds.to_string(),
                r.stream_seconds.to_string(),
                r.updates.to_string(),
                r.seconds_per_update().to_string(),
            ])?;
        }
        for (label, pick) in [("mean", (|s: Stats| s.mean) as fn(Stats) -> f64), ("std", |s: Stats| s.std)] {
            for a in &self.aggregates {
                csv.write_record([
                    label.to_string(),
                    a.algorithm.to_string(),
                    pick(a.fitness).to_string(),
                    pick(a.init_seconds).to_string(),
                    pick(a.stream_seconds).to_string(),
                    pick(a.updates).to_string(),
                    pick(a.seconds_per_update).to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    /// Per-update wall-clock series: `trial, algorithm, update, seconds`.
    pub fn write_series_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["trial", "algorithm", "update", "seconds"])?;
        for r in &self.rows {
            for (k, s) in r.update_seconds.iter().enumerate() {
                csv.write_record([r.trial.to_string(), r.algorithm.to_string(), (k + 1).to_string(), s.to_string()])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    fn write_outputs(&self, csv: Option<&Path>, series: Option<&Path>) -> Result<()> {
        if let Some(path) = csv {
            self.write_csv(BufWriter::new(File::create(path)?))?;
        }
        if let Some(path) = series {
            self.write_series_csv(BufWriter::new(File::create(path)?))?;
        }
        Ok(())
    }
}

/// Independent random stream for `(trial, purpose)`.
fn stream_rng(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial as u64) << 8 | purpose);
    rng
}

const DATA_STREAM: u64 = 0;

fn synthetic(cfg: &BenchConfig, trial: usize) -> Result<DenseTensor> {
    let mut rng = stream_rng(cfg.seed, trial, DATA_STREAM);
    Ok(gen_synthetic(&cfg.dims, cfg.rank, cfg.sir_db, &mut rng)?.0)
}

/// Runs every trial and writes the configured CSV outputs.
///
/// Fitness values depend only on the configuration, never on the thread
/// count or timing.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let shared = match &cfg.data {
        DataSource::Tensor(t) => Some(Arc::clone(t)),
        DataSource::Shared => Some(Arc::new(synthetic(cfg, 0)?)),
        DataSource::PerTrial => None,
    };
    let dims = shared.as_ref().map_or_else(|| cfg.dims.clone(), |t| t.dims().to_vec());

    let one = |trial: usize| -> Result<Vec<TrialRecord>> {
        let x = match &shared {
            Some(t) => Arc::clone(t),
            None => Arc::new(synthetic(cfg, trial)?),
        };
        run_trial(cfg, trial, &x)
    };
    let threads = cfg.thread_cap();
    let per_trial: Vec<Vec<TrialRecord>> = if threads == 1 {
        (0..cfg.trials).map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| RocpError::Config(format!("cannot start {threads} worker threads: {e}")))?;
        pool.install(|| (0..cfg.trials).into_par_iter().map(one).collect::<Result<_>>())?
    };

    let report = BenchReport::assemble(cfg, dims, per_trial.into_iter().flatten().collect());
    report.write_outputs(cfg.csv.as_deref(), cfg.series_csv.as_deref())?;
    Ok(report)
}

/// Every selected algorithm on one tensor.
pub fn run_trial(cfg: &BenchConfig, trial: usize, x: &DenseTensor) -> Result<Vec<TrialRecord>> {
    let (x_init, batches) = split_stream(x, cfg.init_fraction, cfg.batch_size)?;
    let slices = x.last_dim() - x_init.last_dim();
    cfg.algorithms
        .iter()
        .map(|&alg| {
            let mut rng = stream_rng(cfg.seed, trial, alg.stream_id());
            let run = run_algorithm(alg, cfg, &x_init, &batches, &mut rng)?;
            Ok(TrialRecord {
                trial,
                algorithm: alg,
                fitness: run.model.fitness(x)?,
                init_seconds: run.init_seconds,
                stream_seconds: run.update_seconds.iter().sum(),
                updates: batches.len(),
                slices,
                update_seconds: run.update_seconds,
            })
        })
        .collect()
}

struct Run {
    model: KruskalModel,
    init_seconds: f64,
    update_seconds: Vec<f64>,
}

fn als(rank: usize, s: Stopping) -> AlsConfig {
    AlsConfig::new(rank).with_tol(s.tol).with_max_iters(s.max_iters)
}

fn run_algorithm(
    alg: Algorithm,
    cfg: &BenchConfig,
    x_init: &DenseTensor,
    batches: &[DenseTensor],
    rng: &mut ChaCha8Rng,
) -> Result<Run> {
    let mut update_seconds = Vec::with_capacity(batches.len());
    let clock = Instant::now();
    let run = match alg {
        Algorithm::Rocp => {
            let init_cfg = CprandConfig::new(cfg.rank)
                .with_samples(cfg.samples.resolve(cfg.rank))
                .with_tol(cfg.rocp.tol)
                .with_max_iters(cfg.rocp.max_iters);
            let init = cprand_decompose(x_init, &init_cfg, rng)?;
            let mut rocp = Rocp::from_init(init, PInit::Corrected)?;
            let init_seconds = clock.elapsed().as_secs_f64();
            for b in batches {
                let t = Instant::now();
                rocp.step(b, rng)?;
                update_seconds.push(t.elapsed().as_secs_f64());
            }
            Run { model: rocp.into_model(), init_seconds, update_seconds }
        }
        Algorithm::OnlineFull => {
            let init = cp_als(x_init, &als(cfg.rank, cfg.online_init), None, rng)?;
            let mut online = OnlineFull::new(x_init, init.model)?;
            let init_seconds = clock.elapsed().as_secs_f64();
            for b in batches {
                let t = Instant::now();
                online.step(b)?;
                update_seconds.push(t.elapsed().as_secs_f64());
            }
            Run { model: online.into_model(), init_seconds, update_seconds }
        }
        Algorithm::BatchCold | Algorithm::BatchHot => {
            let batch_cfg = als(cfg.rank, cfg.batch);
            let mut seen = x_init.clone();
            let mut model = cp_als(&seen, &batch_cfg, None, rng)?.model;
            let init_seconds = clock.elapsed().as_secs_f64();
            for b in batches {
                let t = Instant::now();
                seen.append_last(b)?;
                model = if alg == Algorithm::BatchCold {
                    batch_cold(&seen, &batch_cfg, rng)?.model
                } else {
                    batch_hot(&seen, &batch_cfg, &model)?.model
                };
                update_seconds.push(t.elapsed().as_secs_f64());
            }
            Run { model, init_seconds, update_seconds }
        }
    };
    Ok(run)
}
