//! Randomized CP-ALS: every factor update solves a least-squares problem on
//! a random subset of unfolding columns, with the matching Khatri-Rao rows
//! built by [`sampled_khatri_rao`].
//!
//! Used to decompose the initial tensor of a stream and to produce the
//! sampled Khatri-Rao matrices that seed the online state.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::kruskal::{sample_unfolding, sampled_khatri_rao, KruskalModel, SampleIndexSet, SampleSource};
use crate::linalg::{right_solve_spd, Matrix, SolveInfo};
use crate::tensor::DenseTensor;

/// `max(R, ⌈10·R·ln R⌉)`.
pub fn default_sample_count(rank: usize) -> usize {
    let r = rank as f64;
    let s = libm::ceil(10.0 * r * libm::log(r)) as usize;
    s.max(rank)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CprandConfig {
    pub rank: usize,
    /// Columns sampled per factor update.
    pub samples: usize,
    /// Stop once the fitness changes by less than this between sweeps.
    pub tol: f64,
    pub max_iters: usize,
}

impl CprandConfig {
    /// Defaults: `samples = default_sample_count(rank)`, `tol = 1e-4`,
    /// `max_iters = 100`.
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            samples: default_sample_count(rank),
            tol: 1e-4,
            max_iters: 100,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(arg_err!("rank must be positive"));
        }
        if self.samples == 0 {
            return Err(arg_err!("sample count must be positive"));
        }
        if self.max_iters == 0 {
            return Err(arg_err!("max_iters must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(arg_err!("tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Least-squares factor from a sampled system.
///
/// Minimizes `‖z_s Uᵀ − x_sᵀ‖_F` over `U` (`I_n × R`) through the normal
/// equations `U = x_s z_s (z_sᵀ z_s)⁻¹`.
pub fn solve_sampled_ls(z_s: &Matrix, x_s: &Matrix) -> Result<(Matrix, SolveInfo)> {
    if z_s.rows() != x_s.cols() {
        return Err(shape_err!(
            "{} sampled Khatri-Rao rows vs {} sampled columns",
            z_s.rows(),
            x_s.cols()
        ));
    }
    let rhs = x_s.matmul(z_s)?;
    let (u, mut info) = right_solve_spd(&rhs, &z_s.gram())?;
    info.underdetermined = z_s.rows() < z_s.cols();
    Ok((u, info))
}

/// Factor matrices with i.i.d. standard-normal entries.
pub fn random_factors<R: Rng + ?Sized>(dims: &[usize], rank: usize, rng: &mut R) -> Vec<Matrix> {
    dims.iter()
        .map(|&d| Matrix::from_fn(d, rank, |_, _| StandardNormal.sample(rng)))
        .collect()
}

/// The sampled system used for one factor update.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSample {
    pub idx: SampleIndexSet,
    /// `s × R`
    pub sampled_kr: Matrix,
    /// `I_n × s`
    pub sampled_unfolding: Matrix,
}

/// Factors drawn from `factors` at every mode but `skip`, ascending.
pub(crate) fn others(factors: &[Matrix], skip: usize) -> Vec<&Matrix> {
    factors
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, f)| f)
        .collect()
}

/// One sweep of sampled ALS over every mode, updating `factors` in place.
///
/// Each mode gets a fresh index set from `source`. Returns the sampled
/// systems and the number of regularized solves.
pub fn sampled_sweep<S: SampleSource + ?Sized>(
    x: &DenseTensor,
    factors: &mut [Matrix],
    samples: usize,
    source: &mut S,
) -> Result<(Vec<ModeSample>, usize)> {
    let dims = x.dims();
    if factors.len() != dims.len() {
        return Err(shape_err!(
            "{} factors for an order-{} tensor",
            factors.len(),
            dims.len()
        ));
    }
    let mut out = Vec::with_capacity(dims.len());
    let mut regularized = 0;
    for n in 0..dims.len() {
        let idx = source.draw(dims, n, samples)?;
        let z = sampled_khatri_rao(&idx, &others(factors, n))?;
        let xs = sample_unfolding(x, &idx)?;
        let (u, info) = solve_sampled_ls(&z, &xs)?;
        regularized += usize::from(info.regularized);
        factors[n] = u;
        out.push(ModeSample {
            idx,
            sampled_kr: z,
            sampled_unfolding: xs,
        });
    }
    Ok((out, regularized))
}

/// Output of [`cprand_decompose`].
#[derive(Clone, Debug, PartialEq)]
pub struct InitResult {
    /// Factors at the best sweep.
    pub model: KruskalModel,
    /// Sampled Khatri-Rao matrices (`s × R`) for modes `0..N-1`, rebuilt
    /// from the best factors with a fresh draw.
    pub best_sampled_kr: Vec<Matrix>,
    /// Loading matrices of modes `0..N-1` at the best sweep.
    pub best_sampled_factors: Vec<Matrix>,
    pub best_fitness: f64,
    /// Sweeps run.
    pub iterations: usize,
    /// Full-tensor fitness after each sweep.
    pub fitness_trace: Vec<f64>,
    pub regularized_solves: usize,
    pub samples: usize,
}

/// Randomized CP-ALS on `x`.
///
/// Factors start from standard-normal draws. After every sweep the exact
/// fitness is evaluated; the best iterate is kept and the run stops when the
/// fitness changes by less than `cfg.tol` or after `cfg.max_iters` sweeps.
pub fn cprand_decompose<R: Rng + ?Sized>(
    x: &DenseTensor,
    cfg: &CprandConfig,
    rng: &mut R,
) -> Result<InitResult> {
    cfg.validate()?;
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if !norm.is_finite() {
        return Err(arg_err!("tensor has non-finite entries"));
    }
    let mut factors = random_factors(x.dims(), cfg.rank, rng);
    let mut best: Option<(f64, Vec<Matrix>)> = None;
    let mut trace = Vec::new();
    let mut regularized_solves = 0;
    let mut prev = f64::NAN;
    for sweep in 1..=cfg.max_iters {
        let (_, reg) = sampled_sweep(x, &mut factors, cfg.samples, rng).map_err(|e| match e {
            Error::SingularSystem => Error::NumericalFailure { sweep },
            other => other,
        })?;
        regularized_solves += reg;
        if !factors.iter().all(Matrix::is_finite) {
            return Err(Error::NumericalFailure { sweep });
        }
        let model = KruskalModel::new(factors.clone())?;
        let fit = 1.0 - model.residual_norm(x)? / norm;
        if !fit.is_finite() {
            return Err(Error::NumericalFailure { sweep });
        }
        trace.push(fit);
        if best.as_ref().map_or(true, |(b, _)| fit > *b) {
            best = Some((fit, factors.clone()));
        }
        if sweep > 1 && (fit - prev).abs() < cfg.tol {
            break;
        }
        prev = fit;
    }
    let (best_fitness, best_factors) = best.expect("at least one sweep ran");
    let order = best_factors.len();
    let mut best_sampled_kr = Vec::with_capacity(order - 1);
    for n in 0..order - 1 {
        let idx = rng.draw(x.dims(), n, cfg.samples)?;
        best_sampled_kr.push(sampled_khatri_rao(&idx, &others(&best_factors, n))?);
    }
    let best_sampled_factors = best_factors[..order - 1].to_vec();
    Ok(InitResult {
        model: KruskalModel::new(best_factors)?,
        best_sampled_kr,
        best_sampled_factors,
        best_fitness,
        iterations: trace.len(),
        fitness_trace: trace,
        regularized_solves,
        samples: cfg.samples,
    })
}
