//! Shared pieces of the model checkpoint format: `LMPM0001`, a u32 model
//! kind, then model-specific u32 dimensions and row-major f32 LE tensors.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"LMPM0001";
pub const KIND_MF: u32 = 0;
pub const KIND_SEQ: u32 = 1;

pub(crate) fn write_header(w: &mut impl Write, kind: u32) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    write_u32(w, kind)
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_tensor<'a>(
    w: &mut impl Write,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads the magic and returns the model kind.
pub fn read_kind(r: &mut impl Read) -> Result<u32> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint shorter than header".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    read_u32(r)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    Ok(b[0])
}

fn read_values(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub(crate) fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let v = read_values(r, rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), v).expect("sized"))
}

pub(crate) fn read_vector(r: &mut impl Read, n: usize) -> Result<Array1<f64>> {
    Ok(Array1::from(read_values(r, n)?))
}
