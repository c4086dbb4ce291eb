//! Streaming updates of a CP model as slices arrive on the last mode.
//!
//! For every non-temporal mode `n` the state keeps
//! `P^(n) = X_s(n) Z_s(n)` and `Q^(n) = Z_s(n)ᵀ Z_s(n)` accumulated over all
//! sampled columns seen so far, so `U^(n) = P^(n) (Q^(n))⁻¹` can be refreshed
//! from the new slab alone. New temporal rows are solved from a sampled
//! system on the new slab and appended below the existing ones, which are
//! never touched again.

use alloc::vec::Vec;

use rand::Rng;

use crate::cprand::{cprand_decompose, others, solve_sampled_ls, CprandConfig, InitResult, ModeSample};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::kruskal::{sample_unfolding, sampled_khatri_rao, KruskalModel, SampleIndexSet, SampleSource};
use crate::linalg::{right_solve_spd, Matrix, SolveInfo};
use crate::tensor::{DenseTensor, StreamBatch};

/// History carried between updates for the non-temporal modes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementaryState {
    p: Vec<Matrix>,
    q: Vec<Matrix>,
    t_len: usize,
    samples: Option<usize>,
    head_dims: Vec<usize>,
}

impl ComplementaryState {
    /// Assembles a state from its parts, checking shapes.
    ///
    /// `samples` is `None` for the unsampled online baseline.
    pub fn from_parts(
        p: Vec<Matrix>,
        q: Vec<Matrix>,
        t_len: usize,
        samples: Option<usize>,
    ) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() {
            return Err(shape_err!("{} P matrices vs {} Q matrices", p.len(), q.len()));
        }
        let rank = q[0].rows();
        for (n, (pn, qn)) in p.iter().zip(&q).enumerate() {
            if qn.shape() != (rank, rank) || pn.cols() != rank || pn.rows() == 0 {
                return Err(shape_err!(
                    "mode {n}: P is {}x{}, Q is {}x{}, rank {rank}",
                    pn.rows(),
                    pn.cols(),
                    qn.rows(),
                    qn.cols()
                ));
            }
        }
        if samples == Some(0) {
            return Err(arg_err!("sample count must be positive"));
        }
        let head_dims = p.iter().map(Matrix::rows).collect();
        Ok(Self {
            p,
            q,
            t_len,
            samples,
            head_dims,
        })
    }

    /// `P^(n)` for each non-temporal mode.
    pub fn p(&self) -> &[Matrix] {
        &self.p
    }

    /// `Q^(n)` for each non-temporal mode.
    pub fn q(&self) -> &[Matrix] {
        &self.q
    }

    /// Slices absorbed so far on the temporal mode.
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Columns sampled per update, `None` when updates are exact.
    pub fn samples(&self) -> Option<usize> {
        self.samples
    }

    pub fn head_dims(&self) -> &[usize] {
        &self.head_dims
    }

    pub fn rank(&self) -> usize {
        self.q[0].rows()
    }

    /// Heap bytes owned by the state.
    pub fn heap_bytes(&self) -> usize {
        let mats: usize = self.p.iter().chain(&self.q).map(Matrix::heap_bytes).sum();
        mats + self.p.capacity() * core::mem::size_of::<Matrix>()
            + self.q.capacity() * core::mem::size_of::<Matrix>()
            + self.head_dims.capacity() * core::mem::size_of::<usize>()
    }

    pub(crate) fn accumulate(&mut self, mode: usize, dp: &Matrix, dq: &Matrix) -> Result<()> {
        self.p[mode].add_assign(dp)?;
        self.q[mode].add_assign(dq)
    }

    pub(crate) fn advance(&mut self, slices: usize) {
        self.t_len += slices;
    }

    pub(crate) fn check_batch(&self, batch: &DenseTensor) -> Result<()> {
        if batch.head_dims() != self.head_dims.as_slice() {
            return Err(shape_err!(
                "batch head dims {:?} vs state {:?}",
                batch.head_dims(),
                self.head_dims
            ));
        }
        Ok(())
    }
}

/// How `P^(n)` is seeded from the initial decomposition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PInit {
    /// `P = U_best · Q`, so that `P Q⁻¹` reproduces the initial factor.
    #[default]
    Corrected,
    /// `P = U_best`, kept for comparison experiments.
    Literal,
}

/// Seeds the complementary matrices from a randomized initial
/// decomposition: `Q^(n) = Z_bestᵀ Z_best`, `P^(n)` per [`PInit`].
pub fn init_state(init: &InitResult, samples: usize, p_init: PInit) -> Result<ComplementaryState> {
    let order = init.model.order();
    if init.best_sampled_kr.len() != order - 1 || init.best_sampled_factors.len() != order - 1 {
        return Err(shape_err!(
            "expected {} sampled Khatri-Rao matrices and factors, got {} and {}",
            order - 1,
            init.best_sampled_kr.len(),
            init.best_sampled_factors.len()
        ));
    }
    let rank = init.model.rank();
    let mut p = Vec::with_capacity(order - 1);
    let mut q = Vec::with_capacity(order - 1);
    for (n, (z, u)) in init
        .best_sampled_kr
        .iter()
        .zip(&init.best_sampled_factors)
        .enumerate()
    {
        if z.shape() != (samples, rank) {
            return Err(shape_err!(
                "sampled Khatri-Rao {n} is {}x{}, expected {samples}x{rank}",
                z.rows(),
                z.cols()
            ));
        }
        if u.shape() != (init.model.factor(n).rows(), rank) {
            return Err(shape_err!("best factor {n} does not match the model"));
        }
        let qn = z.gram();
        let pn = match p_init {
            PInit::Corrected => u.matmul(&qn)?,
            PInit::Literal => u.clone(),
        };
        p.push(pn);
        q.push(qn);
    }
    let t_len = init.model.factor(order - 1).rows();
    ComplementaryState::from_parts(p, q, t_len, Some(samples))
}

/// New temporal rows and the sampled system they were solved from.
#[derive(Clone, Debug, PartialEq)]
pub struct LastModeUpdate {
    /// `I_new × R` rows to append below `U^(N)`.
    pub u_new: Matrix,
    pub idx: SampleIndexSet,
    /// `s × R`
    pub sampled_kr: Matrix,
    pub info: SolveInfo,
}

fn check_head(model: &KruskalModel, batch: &DenseTensor) -> Result<()> {
    let dims = model.dims();
    if batch.order() != dims.len() || batch.head_dims() != &dims[..dims.len() - 1] {
        return Err(shape_err!(
            "batch dims {:?} do not extend model head dims {:?}",
            batch.dims(),
            &dims[..dims.len() - 1]
        ));
    }
    Ok(())
}

/// Solves the temporal rows of a new batch from `samples` freshly drawn
/// columns of its last-mode unfolding.
pub fn update_last_mode<S: SampleSource + ?Sized>(
    model: &KruskalModel,
    batch: &StreamBatch,
    samples: usize,
    source: &mut S,
) -> Result<LastModeUpdate> {
    check_head(model, batch)?;
    let last = model.order() - 1;
    let idx = source.draw(batch.dims(), last, samples)?;
    let head: Vec<&Matrix> = model.factors()[..last].iter().collect();
    let z = sampled_khatri_rao(&idx, &head)?;
    let xs = sample_unfolding(batch, &idx)?;
    let (u_new, info) = solve_sampled_ls(&z, &xs)?;
    Ok(LastModeUpdate {
        u_new,
        idx,
        sampled_kr: z,
        info,
    })
}

/// Per-mode record of an [`update_other_modes`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct OtherModesUpdate {
    pub modes: Vec<ModeSample>,
    pub regularized: usize,
}

/// Folds a batch into `P^(n)`, `Q^(n)` for every non-temporal mode and
/// refreshes `U^(n) = P^(n) (Q^(n))⁻¹`, one mode at a time.
///
/// Samples are drawn from the new slab only; the temporal index of each
/// sample selects a row of `u_new`.
pub fn update_other_modes<S: SampleSource + ?Sized>(
    state: &mut ComplementaryState,
    model: &mut KruskalModel,
    batch: &StreamBatch,
    u_new: &Matrix,
    source: &mut S,
) -> Result<OtherModesUpdate> {
    check_head(model, batch)?;
    state.check_batch(batch)?;
    let samples = state
        .samples
        .ok_or_else(|| arg_err!("state was built for exact updates"))?;
    if u_new.shape() != (batch.last_dim(), model.rank()) {
        return Err(shape_err!(
            "new temporal rows are {}x{}, expected {}x{}",
            u_new.rows(),
            u_new.cols(),
            batch.last_dim(),
            model.rank()
        ));
    }
    let last = model.order() - 1;
    let mut modes = Vec::with_capacity(last);
    let mut regularized = 0;
    for n in 0..last {
        let idx = source.draw(batch.dims(), n, samples)?;
        let z = {
            let mut list = others(&model.factors()[..last], n);
            list.push(u_new);
            sampled_khatri_rao(&idx, &list)?
        };
        let xs = sample_unfolding(batch, &idx)?;
        state.accumulate(n, &xs.matmul(&z)?, &z.gram())?;
        let (u, info) = right_solve_spd(&state.p[n], &state.q[n])?;
        if !u.is_finite() {
            return Err(Error::SingularSystem);
        }
        regularized += usize::from(info.regularized);
        model.set_factor(n, u);
        modes.push(ModeSample {
            idx,
            sampled_kr: z,
            sampled_unfolding: xs,
        });
    }
    Ok(OtherModesUpdate { modes, regularized })
}

/// Everything one streaming step drew and solved.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub last: LastModeUpdate,
    pub other: OtherModesUpdate,
}

/// A running randomized online decomposition.
#[derive(Clone, Debug)]
pub struct Rocp {
    model: KruskalModel,
    state: ComplementaryState,
    updates: usize,
    regularized_solves: usize,
}

impl Rocp {
    /// Starts from a randomized initial decomposition.
    pub fn from_init(init: InitResult, p_init: PInit) -> Result<Self> {
        let state = init_state(&init, init.samples, p_init)?;
        Ok(Self {
            regularized_solves: init.regularized_solves,
            model: init.model,
            state,
            updates: 0,
        })
    }

    /// Resumes from a previously saved model and state.
    pub fn from_parts(model: KruskalModel, state: ComplementaryState) -> Result<Self> {
        let dims = model.dims();
        if state.head_dims() != &dims[..dims.len() - 1] || state.rank() != model.rank() {
            return Err(shape_err!("state does not match the model"));
        }
        if state.t_len() != dims[dims.len() - 1] {
            return Err(shape_err!(
                "state has absorbed {} slices but the model has {} temporal rows",
                state.t_len(),
                dims[dims.len() - 1]
            ));
        }
        if state.samples().is_none() {
            return Err(arg_err!("state was built for exact updates"));
        }
        Ok(Self {
            model,
            state,
            updates: 0,
            regularized_solves: 0,
        })
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    pub fn state(&self) -> &ComplementaryState {
        &self.state
    }

    pub fn into_parts(self) -> (KruskalModel, ComplementaryState) {
        (self.model, self.state)
    }

    pub fn into_model(self) -> KruskalModel {
        self.model
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn regularized_solves(&self) -> usize {
        self.regularized_solves
    }

    /// Absorbs one batch.
    ///
    /// Shapes are validated before anything is modified; a failure inside
    /// the non-temporal updates leaves the run unusable.
    pub fn step<S: SampleSource + ?Sized>(
        &mut self,
        batch: &StreamBatch,
        source: &mut S,
    ) -> Result<StepTrace> {
        check_head(&self.model, batch)?;
        self.state.check_batch(batch)?;
        let samples = self.state.samples.expect("checked at construction");
        let last = update_last_mode(&self.model, batch, samples, source)?;
        let n = self.model.order() - 1;
        let grown = self.model.factor(n).vstack(&last.u_new)?;
        self.model.set_factor(n, grown);
        let other = update_other_modes(&mut self.state, &mut self.model, batch, &last.u_new, source)?;
        self.state.advance(batch.last_dim());
        self.updates += 1;
        self.regularized_solves += usize::from(last.info.regularized) + other.regularized;
        Ok(StepTrace { last, other })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocpConfig {
    /// Randomized decomposition of the initial tensor.
    pub init: CprandConfig,
    pub p_init: PInit,
}

impl RocpConfig {
    /// Defaults for `rank`; the same sample count is used for the initial
    /// decomposition and every update.
    pub fn new(rank: usize) -> Self {
        Self {
            init: CprandConfig::new(rank),
            p_init: PInit::Corrected,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.init.samples = samples;
        self
    }
}

/// Decomposes `x_init`, then absorbs `batches` in order.
pub fn rocp_run<'a, R: Rng + ?Sized>(
    x_init: &DenseTensor,
    batches: impl IntoIterator<Item = &'a StreamBatch>,
    cfg: &RocpConfig,
    rng: &mut R,
) -> Result<KruskalModel> {
    let init = cprand_decompose(x_init, &cfg.init, rng)?;
    let mut rocp = Rocp::from_init(init, cfg.p_init)?;
    for batch in batches {
        rocp.step(batch, rng)?;
    }
    Ok(rocp.into_model())
}
