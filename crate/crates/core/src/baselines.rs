//! Comparison algorithms: batch CP-ALS (cold and hot restarts) and an online
//! updater that accumulates the same complementary matrices as
//! [`crate::online`] from the full, unsampled Khatri-Rao products.

use alloc::vec::Vec;

use rand::Rng;

use crate::cprand::random_factors;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::kruskal::KruskalModel;
use crate::linalg::{right_solve_spd, Matrix};
use crate::online::ComplementaryState;
use crate::products::{gram_hadamard, khatri_rao_excluding, khatri_rao_list};
use crate::tensor::{DenseTensor, StreamBatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl AlsConfig {
    /// `tol = 1e-4`, `max_iters = 50`.
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            tol: 1e-4,
            max_iters: 50,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlsResult {
    pub model: KruskalModel,
    /// Fitness after the last sweep.
    pub fitness: f64,
    pub sweeps: usize,
    pub fitness_trace: Vec<f64>,
}

/// CP-ALS on `x`, from `init` when given, otherwise from standard-normal
/// factors drawn from `rng`.
///
/// Each factor update solves the full least-squares problem through the
/// normal equations, with `ZᵀZ` formed as the Hadamard product of factor
/// Grams. After every sweep the columns of modes `1..N-1` are normalized
/// and their norms absorbed into the last factor. Stops when the fitness
/// changes by less than `tol`.
pub fn cp_als<R: Rng + ?Sized>(
    x: &DenseTensor,
    cfg: &AlsConfig,
    init: Option<&KruskalModel>,
    rng: &mut R,
) -> Result<AlsResult> {
    let factors = match init {
        Some(m) => {
            m.check_dims(x.dims())?;
            if m.rank() != cfg.rank {
                return Err(arg_err!("init has rank {}, expected {}", m.rank(), cfg.rank));
            }
            m.factors().to_vec()
        }
        None => {
            if cfg.rank == 0 {
                return Err(arg_err!("rank must be positive"));
            }
            random_factors(x.dims(), cfg.rank, rng)
        }
    };
    als_from(x, cfg, factors)
}

fn als_from(x: &DenseTensor, cfg: &AlsConfig, mut factors: Vec<Matrix>) -> Result<AlsResult> {
    if cfg.max_iters == 0 {
        return Err(arg_err!("max_iters must be positive"));
    }
    let norm2: f64 = x.data().iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if !norm2.is_finite() {
        return Err(arg_err!("tensor norm is not finite"));
    }
    let norm = libm::sqrt(norm2);
    let order = factors.len();
    let last = order - 1;
    let mut grams: Vec<Matrix> = factors.iter().map(Matrix::gram).collect();
    let mut trace = Vec::new();
    let mut prev = f64::NAN;
    for sweep in 1..=cfg.max_iters {
        let mut inner = 0.0;
        for n in 0..order {
            let z = khatri_rao_excluding(&factors, n)?;
            let m = x.mttkrp(&z, n)?;
            drop(z);
            let g = gram_hadamard(&grams, n)?;
            let (u, _) = right_solve_spd(&m, &g).map_err(|_| Error::NumericalFailure { sweep })?;
            if !u.is_finite() {
                return Err(Error::NumericalFailure { sweep });
            }
            if n == last {
                inner = u.as_slice().iter().zip(m.as_slice()).map(|(a, b)| a * b).sum();
            }
            grams[n] = u.gram();
            factors[n] = u;
        }
        // ‖X̂‖² = Σ_{r,r'} ⊛_n (U^(n)ᵀ U^(n))
        let model_norm2: f64 = grams
            .iter()
            .skip(1)
            .try_fold(grams[0].clone(), |acc, g| crate::products::hadamard(&acc, g))?
            .as_slice()
            .iter()
            .sum();
        normalize_into_last(&mut factors);
        for (g, f) in grams.iter_mut().zip(&factors) {
            *g = f.gram();
        }
        let resid2 = (norm2 - 2.0 * inner + model_norm2).max(0.0);
        let fit = 1.0 - libm::sqrt(resid2) / norm;
        if !fit.is_finite() {
            return Err(Error::NumericalFailure { sweep });
        }
        trace.push(fit);
        if sweep > 1 && (fit - prev).abs() < cfg.tol {
            break;
        }
        prev = fit;
    }
    Ok(AlsResult {
        model: KruskalModel::new(factors)?,
        fitness: *trace.last().expect("at least one sweep"),
        sweeps: trace.len(),
        fitness_trace: trace,
    })
}

fn normalize_into_last(factors: &mut [Matrix]) {
    let (head, last) = factors.split_at_mut(factors.len() - 1);
    let last = &mut last[0];
    for f in head {
        for r in 0..f.cols() {
            let nrm = libm::sqrt(f.column(r).iter().map(|v| v * v).sum());
            if nrm > 0.0 {
                f.scale_column(r, 1.0 / nrm);
                last.scale_column(r, nrm);
            }
        }
    }
}

/// Recomputes CP-ALS on the whole accumulated tensor from a fresh random
/// start.
pub fn batch_cold<R: Rng + ?Sized>(x: &DenseTensor, cfg: &AlsConfig, rng: &mut R) -> Result<AlsResult> {
    cp_als(x, cfg, None, rng)
}

/// Recomputes CP-ALS on the whole accumulated tensor starting from the
/// previous model, after solving rows for the newly arrived slices.
pub fn batch_hot(x: &DenseTensor, cfg: &AlsConfig, prev: &KruskalModel) -> Result<AlsResult> {
    if prev.rank() != cfg.rank {
        return Err(arg_err!("previous model has rank {}, expected {}", prev.rank(), cfg.rank));
    }
    let padded = pad_temporal(x, prev)?;
    als_from(x, cfg, padded.into_factors())
}

/// Extends `prev`'s temporal factor to cover every slice of `x` by solving
/// the least-squares problem for the new rows with the other factors fixed.
pub fn pad_temporal(x: &DenseTensor, prev: &KruskalModel) -> Result<KruskalModel> {
    let dims = prev.dims();
    let last = dims.len() - 1;
    if x.order() != dims.len() || x.head_dims() != &dims[..last] {
        return Err(shape_err!("tensor dims {:?} vs model dims {:?}", x.dims(), dims));
    }
    let have = dims[last];
    let want = x.last_dim();
    if want < have {
        return Err(shape_err!("model has {have} temporal rows, tensor only {want}"));
    }
    if want == have {
        return Ok(prev.clone());
    }
    let new = x.slab(have, want - have)?;
    let u_new = solve_temporal_rows(prev.factors(), &new)?;
    let mut factors = prev.factors().to_vec();
    factors[last] = factors[last].vstack(&u_new)?;
    KruskalModel::new(factors)
}

/// Exact least-squares temporal rows of `batch` given the non-temporal
/// factors (the temporal factor in `factors` is ignored).
fn solve_temporal_rows(factors: &[Matrix], batch: &StreamBatch) -> Result<Matrix> {
    let last = factors.len() - 1;
    let head: Vec<&Matrix> = factors[..last].iter().rev().collect();
    let z = khatri_rao_list(&head)?;
    let m = batch.mttkrp(&z, last)?;
    let grams: Vec<Matrix> = factors[..last].iter().map(Matrix::gram).collect();
    let g = gram_hadamard(&grams, usize::MAX)?;
    let (u, _) = right_solve_spd(&m, &g)?;
    Ok(u)
}

/// Complementary matrices of an exact online run:
/// `P^(n) = X_(n) Z_(n)`, `Q^(n) = Z_(n)ᵀ Z_(n)` over the whole initial tensor.
pub fn online_full_init(x_init: &DenseTensor, model: &KruskalModel) -> Result<ComplementaryState> {
    model.check_dims(x_init.dims())?;
    let last = model.order() - 1;
    let grams: Vec<Matrix> = model.factors().iter().map(Matrix::gram).collect();
    let mut p = Vec::with_capacity(last);
    let mut q = Vec::with_capacity(last);
    for n in 0..last {
        let z = khatri_rao_excluding(model.factors(), n)?;
        p.push(x_init.mttkrp(&z, n)?);
        q.push(gram_hadamard(&grams, n)?);
    }
    ComplementaryState::from_parts(p, q, x_init.last_dim(), None)
}

/// Exact counterpart of one randomized online step: temporal rows from the
/// full last-mode system, then `P^(n) += X_(n)new Z_(n)new`,
/// `Q^(n) += Z_(n)newᵀ Z_(n)new` and `U^(n) = P^(n) (Q^(n))⁻¹` per mode.
pub fn online_full_update(
    state: &mut ComplementaryState,
    model: &mut KruskalModel,
    batch: &StreamBatch,
) -> Result<()> {
    state.check_batch(batch)?;
    let dims = model.dims();
    let last = dims.len() - 1;
    if batch.order() != dims.len() || batch.head_dims() != &dims[..last] {
        return Err(shape_err!("batch dims {:?} vs model dims {:?}", batch.dims(), dims));
    }
    if state.t_len() != dims[last] {
        return Err(shape_err!(
            "state has absorbed {} slices, model has {} temporal rows",
            state.t_len(),
            dims[last]
        ));
    }
    let u_new = solve_temporal_rows(model.factors(), batch)?;
    let mut current: Vec<Matrix> = model.factors()[..last].to_vec();
    current.push(u_new);
    let mut grams: Vec<Matrix> = current.iter().map(Matrix::gram).collect();
    for n in 0..last {
        let z = khatri_rao_excluding(&current, n)?;
        let dp = batch.mttkrp(&z, n)?;
        drop(z);
        let dq = gram_hadamard(&grams, n)?;
        state.accumulate(n, &dp, &dq)?;
        let (u, _) = right_solve_spd(&state.p()[n], &state.q()[n])?;
        if !u.is_finite() {
            return Err(Error::SingularSystem);
        }
        grams[n] = u.gram();
        current[n] = u;
    }
    let u_new = current.pop().expect("temporal rows");
    let grown = model.factor(last).vstack(&u_new)?;
    for (n, f) in current.into_iter().enumerate() {
        model.set_factor(n, f);
    }
    model.set_factor(last, grown);
    state.advance(batch.last_dim());
    Ok(())
}

/// A running exact online decomposition.
#[derive(Clone, Debug)]
pub struct OnlineFull {
    model: KruskalModel,
    state: ComplementaryState,
}

impl OnlineFull {
    pub fn new(x_init: &DenseTensor, model: KruskalModel) -> Result<Self> {
        let state = online_full_init(x_init, &model)?;
        Ok(Self { model, state })
    }

    pub fn from_parts(model: KruskalModel, state: ComplementaryState) -> Self {
        Self { model, state }
    }

    pub fn step(&mut self, batch: &StreamBatch) -> Result<()> {
        online_full_update(&mut self.state, &mut self.model, batch)
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    pub fn state(&self) -> &ComplementaryState {
        &self.state
    }

    pub fn into_model(self) -> KruskalModel {
        self.model
    }
}
