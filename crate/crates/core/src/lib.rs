//! Streaming CP tensor decomposition with sampled updates.
//!
//! A streaming CP (CANDECOMP/PARAFAC) decomposition for tensors that grow
//! along their last mode. Each update estimates the new temporal rows and
//! refreshes the other loading matrices from a random sample of unfolding
//! columns, so the full Khatri-Rao product is never formed.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, timing and the
//! command line live in the companion `rocp` crate.
//!
//! Module map:
//! - [`tensor`], [`linalg`], [`products`]: dense storage, unfoldings, and
//!   the Khatri-Rao / Hadamard products.
//! - [`kruskal`]: CP models, fitness, and sampled Khatri-Rao rows.
//! - [`cprand`]: randomized CP-ALS used to initialize the online state.
//! - [`online`]: the streaming update state machine.
//! - [`baselines`]: CP-ALS (cold/hot restarts) and an unsampled online
//!   updater.
//! - [`synth`]: planted low-rank tensors with controlled noise, and stream
//!   splitting.
#![no_std]

extern crate alloc;

mod error;

pub mod baselines;
pub mod cprand;
pub mod kruskal;
pub mod linalg;
pub mod online;
pub mod products;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use kruskal::{
    draw_samples, fitness, sample_unfolding, sampled_khatri_rao, Exhaustive, KruskalModel,
    Recording, Replay, SampleIndexSet, SampleSource,
};
pub use linalg::{Matrix, SolveInfo};
pub use tensor::{decode_index, linear_index, DenseTensor, StreamBatch};
