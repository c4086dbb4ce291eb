//! Binary tensor files and the model/state files built from them.
//!
//! A tensor record is the 4 magic bytes `ROCP`, a `u8` version (1), a `u32`
//! order `N`, `N` `u64` extents, then the values as `f64`, first index
//! fastest. All integers and floats are little-endian. Matrices are stored
//! as order-2 records; models and online states are sequences of records.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rocp_core::online::ComplementaryState;
use rocp_core::{DenseTensor, KruskalModel, Matrix};

use crate::error::RocpError;

pub const MAGIC: &[u8; 4] = b"ROCP";
pub const VERSION: u8 = 1;

// refuse headers describing more than 2^40 values before allocating
const MAX_VALUES: u128 = 1 << 40;

pub fn write_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one record; `Ok(None)` on a clean end of stream.
fn read_record<R: Read>(r: &mut R) -> Result<Option<DenseTensor>, RocpError> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut magic[1..])?;
    if &magic != MAGIC {
        return Err(RocpError::Format(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(RocpError::Format(format!("unsupported version {}", version[0])));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let order = u32::from_le_bytes(word) as usize;
    if order == 0 || order > 64 {
        return Err(RocpError::Format(format!("implausible order {order}")));
    }
    let mut dims = Vec::with_capacity(order);
    let mut total: u128 = 1;
    let mut long = [0u8; 8];
    for _ in 0..order {
        r.read_exact(&mut long)?;
        let d = u64::from_le_bytes(long);
        total = total.saturating_mul(u128::from(d));
        dims.push(usize::try_from(d).map_err(|_| RocpError::Format(format!("extent {d} too large")))?);
    }
    if total > MAX_VALUES {
        return Err(RocpError::Format(format!("header describes {total} values")));
    }
    let mut data = Vec::with_capacity(total as usize);
    for _ in 0..total {
        r.read_exact(&mut long)?;
        data.push(f64::from_le_bytes(long));
    }
    Ok(Some(DenseTensor::new(dims, data)?))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor, RocpError> {
    read_record(r)?.ok_or_else(|| RocpError::Format("empty tensor file".into()))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<(), RocpError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor, RocpError> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor(&mut r)?;
    if read_record(&mut r)?.is_some() {
        return Err(RocpError::Format("trailing records after the tensor".into()));
    }
    Ok(t)
}

fn matrix_record(m: &Matrix) -> DenseTensor {
    DenseTensor::new(vec![m.rows(), m.cols()], m.as_slice().to_vec()).expect("matrix shape is valid")
}

fn record_matrix(t: DenseTensor) -> Result<Matrix, RocpError> {
    if t.order() != 2 {
        return Err(RocpError::Format(format!("expected a matrix record, got order {}", t.order())));
    }
    let (rows, cols) = (t.dims()[0], t.dims()[1]);
    Ok(Matrix::from_col_major(rows, cols, t.into_data())?)
}

fn read_all<R: Read>(r: &mut R) -> Result<Vec<DenseTensor>, RocpError> {
    let mut out = Vec::new();
    while let Some(t) = read_record(r)? {
        out.push(t);
    }
    Ok(out)
}

/// One matrix record per factor, in mode order.
pub fn write_model<W: Write>(w: &mut W, m: &KruskalModel) -> io::Result<()> {
    for f in m.factors() {
        write_tensor(w, &matrix_record(f))?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<KruskalModel, RocpError> {
    let factors = read_all(r)?
        .into_iter()
        .map(record_matrix)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KruskalModel::new(factors)?)
}

/// Records `P^(1..N-1)`, then `Q^(1..N-1)`, then the absorbed temporal
/// length as a 1×1 record.
pub fn write_state<W: Write>(w: &mut W, s: &ComplementaryState) -> io::Result<()> {
    for m in s.p().iter().chain(s.q()) {
        write_tensor(w, &matrix_record(m))?;
    }
    let t_len = DenseTensor::new(vec![1, 1], vec![s.t_len() as f64]).expect("1x1");
    write_tensor(w, &t_len)
}

/// Inverse of [`write_state`]; the sample count is not stored and must be
/// supplied.
pub fn read_state<R: Read>(r: &mut R, samples: Option<usize>) -> Result<ComplementaryState, RocpError> {
    let mut records = read_all(r)?;
    if records.len() < 3 || records.len() % 2 == 0 {
        return Err(RocpError::Format(format!("{} records cannot form a state", records.len())));
    }
    let t_len = records.pop().expect("non-empty");
    if t_len.dims() != [1, 1] {
        return Err(RocpError::Format("last record must be the 1x1 temporal length".into()));
    }
    let len = t_len.data()[0];
    if !(len >= 0.0 && len.fract() == 0.0 && len < 9.007_199_254_740_992e15) {
        return Err(RocpError::Format(format!("invalid temporal length {len}")));
    }
    let half = records.len() / 2;
    let mut mats = records.into_iter().map(record_matrix).collect::<Result<Vec<_>, _>>()?;
    let q = mats.split_off(half);
    Ok(ComplementaryState::from_parts(mats, q, len as usize, samples)?)
}

pub fn save_model(path: impl AsRef<Path>, m: &KruskalModel) -> Result<(), RocpError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KruskalModel, RocpError> {
    read_model(&mut BufReader::new(File::open(path)?))
}

pub fn save_state(path: impl AsRef<Path>, s: &ComplementaryState) -> Result<(), RocpError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_state(&mut w, s)?;
    w.flush()?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>, samples: Option<usize>) -> Result<ComplementaryState, RocpError> {
    read_state(&mut BufReader::new(File::open(path)?), samples)
}
