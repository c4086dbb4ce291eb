//! Planted low-rank tensors with Gaussian interference, and splitting a
//! tensor into an initial block plus a stream of last-mode batches.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cprand::random_factors;
use crate::error::{arg_err, Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{DenseTensor, StreamBatch};

/// Noiseless rank-`rank` tensor from standard-normal factors.
///
/// Panics on empty or zero extents; use [`gen_synthetic`] for checked input.
pub fn planted<R: Rng + ?Sized>(dims: &[usize], rank: usize, rng: &mut R) -> (DenseTensor, KruskalModel) {
    let truth = KruskalModel::new(random_factors(dims, rank, rng)).expect("valid dims and rank");
    (truth.reconstruct(), truth)
}

/// A planted model plus interference at a fixed signal-to-interference
/// ratio.
///
/// Factors have i.i.d. standard-normal entries. With `sir_db = Some(db)` a
/// Gaussian noise tensor is drawn and rescaled so that
/// `10·log10(‖signal‖² / ‖noise‖²) = db` holds for that draw; with `None`
/// the signal is returned unchanged.
pub fn gen_synthetic<R: Rng + ?Sized>(
    dims: &[usize],
    rank: usize,
    sir_db: Option<f64>,
    rng: &mut R,
) -> Result<(DenseTensor, KruskalModel)> {
    if rank == 0 {
        return Err(arg_err!("rank must be positive"));
    }
    if let Some(db) = sir_db {
        if !db.is_finite() {
            return Err(arg_err!("SIR must be finite, got {db}"));
        }
    }
    DenseTensor::zeros(dims)?;
    let (mut x, truth) = planted(dims, rank, rng);
    if let Some(db) = sir_db {
        let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
        let signal_energy: f64 = x.data().iter().map(|v| v * v).sum();
        let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
        let scale = libm::sqrt(signal_energy / noise_energy / libm::pow(10.0, db / 10.0));
        for (v, e) in x.data_mut().iter_mut().zip(&noise) {
            *v += scale * e;
        }
    }
    Ok((x, truth))
}

/// `10·log10(‖signal‖² / ‖observed − signal‖²)` in dB.
pub fn measured_sir_db(signal: &DenseTensor, observed: &DenseTensor) -> Result<f64> {
    let noise = observed.distance(signal)?;
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    let s = signal.frobenius_norm();
    Ok(20.0 * libm::log10(s / noise))
}

/// Splits `x` along its last mode into the leading
/// `⌊init_fraction · I_N⌋` slices and batches of `batch_size` slices (the
/// final batch may be shorter).
pub fn split_stream(
    x: &DenseTensor,
    init_fraction: f64,
    batch_size: usize,
) -> Result<(DenseTensor, Vec<StreamBatch>)> {
    if !(init_fraction > 0.0 && init_fraction < 1.0) {
        return Err(arg_err!("init fraction must lie in (0, 1), got {init_fraction}"));
    }
    if batch_size == 0 {
        return Err(arg_err!("batch size must be positive"));
    }
    let total = x.last_dim();
    let init_len = libm::floor(init_fraction * total as f64) as usize;
    if init_len == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "init fraction {init_fraction} of {total} slices leaves an empty initial tensor"
        )));
    }
    let init = x.slab(0, init_len)?;
    let mut batches = Vec::with_capacity((total - init_len).div_ceil(batch_size));
    let mut start = init_len;
    while start < total {
        let len = batch_size.min(total - start);
        batches.push(x.slab(start, len)?);
        start += len;
    }
    Ok((init, batches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_interference_returns_signal() {
        let (x, truth) = gen_synthetic(&[4, 5, 6], 2, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(x, truth.reconstruct());
    }

    #[test]
    fn interference_hits_requested_sir() {
        for db in [20.0, 0.0, 35.5] {
            let (x, truth) = gen_synthetic(&[6, 5, 7], 3, Some(db), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
            let sir = measured_sir_db(&truth.reconstruct(), &x).unwrap();
            assert!((sir - db).abs() <= 1e-9, "{sir} vs {db}");
        }
    }

    #[test]
    fn bad_generation_arguments_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_synthetic(&[4, 4], 0, None, &mut rng).is_err());
        assert!(gen_synthetic(&[4, 0], 2, None, &mut rng).is_err());
        assert!(gen_synthetic(&[4, 4], 2, Some(f64::NAN), &mut rng).is_err());
    }

    #[test]
    fn split_protocol_lengths() {
        let x = DenseTensor::zeros(&[2, 2, 200]).unwrap();
        let (init, batches) = split_stream(&x, 0.2, 1).unwrap();
        assert_eq!(init.last_dim(), 40);
        assert_eq!(batches.len(), 160);

        let x = DenseTensor::zeros(&[3, 10]).unwrap();
        let (init, batches) = split_stream(&x, 0.2, 4).unwrap();
        assert_eq!(init.last_dim(), 2);
        let sizes: Vec<usize> = batches.iter().map(DenseTensor::last_dim).collect();
        assert_eq!(sizes, [4, 4]);

        let x = DenseTensor::zeros(&[3, 11]).unwrap();
        let (_, batches) = split_stream(&x, 0.2, 4).unwrap();
        let sizes: Vec<usize> = batches.iter().map(DenseTensor::last_dim).collect();
        assert_eq!(sizes, [4, 4, 1]);
    }

    #[test]
    fn split_partitions_the_tensor() {
        let (x, _) = gen_synthetic(&[3, 4, 23], 2, Some(10.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (mut acc, batches) = split_stream(&x, 0.3, 5).unwrap();
        for b in &batches {
            acc.append_last(b).unwrap();
        }
        assert_eq!(acc, x);
    }

    #[test]
    fn empty_init_is_rejected() {
        let x = DenseTensor::zeros(&[3, 4]).unwrap();
        assert!(split_stream(&x, 0.2, 1).is_err());
        assert!(split_stream(&x, 1.0, 1).is_err());
        assert!(split_stream(&x, 0.5, 0).is_err());
    }
}
