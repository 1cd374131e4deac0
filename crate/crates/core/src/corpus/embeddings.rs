use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use super::InteractionLog;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"LMPE0001";

/// Item embeddings from a pretrained text encoder, one row per internal
/// item index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f32>,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn num_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.values.row(i)
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    /// Widened copy for 64-bit arithmetic.
    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }
}

/// Writes the binary embedding format.
pub fn write_embedding_file(path: impl AsRef<Path>, x: &Array2<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(&mut w, x)?;
    w.flush()?;
    Ok(())
}

pub fn write_embeddings(mut w: impl Write, x: &Array2<f32>) -> Result<()> {
    let n = u32::try_from(x.nrows()).map_err(|_| Error::Parameter("too many rows".into()))?;
    let d = u32::try_from(x.ncols()).map_err(|_| Error::Parameter("too many columns".into()))?;
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    for v in x.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    read_embeddings(BufReader::new(File::open(path)?))
}

pub fn read_embeddings(mut r: impl Read) -> Result<Array2<f32>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("embedding file shorter than header".into()))?;
    if &head[..8] != EMBEDDING_MAGIC {
        return Err(Error::Format("bad embedding magic".into()));
    }
    let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut body = vec![0u8; n * d * 4];
    r.read_exact(&mut body).map_err(|_| {
        Error::Format(format!("embedding file truncated: expected {n}x{d} floats"))
    })?;
    let vals = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((n, d), vals).expect("shape checked"))
}

pub fn read_item_tokens(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let tok = line.trim_end_matches('\r');
        if !tok.is_empty() {
            out.push(tok.to_string());
        }
    }
    Ok(out)
}

pub fn write_item_tokens(path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tokens {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads embeddings and permutes rows into the log's internal item order.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    items_path: impl AsRef<Path>,
    log: &InteractionLog,
) -> Result<EmbeddingMatrix> {
    let raw = read_embedding_file(path)?;
    let tokens = read_item_tokens(items_path)?;
    align_embeddings(&raw, &tokens, log)
}

pub fn align_embeddings(
    raw: &Array2<f32>,
    tokens: &[String],
    log: &InteractionLog,
) -> Result<EmbeddingMatrix> {
    if tokens.len() != raw.nrows() {
        return Err(Error::Format(format!(
            "{} item tokens for {} embedding rows",
            tokens.len(),
            raw.nrows()
        )));
    }
    let row_of: HashMap<&str, usize> = tokens
        .iter()
        .enumerate()
        .map(|(r, t)| (t.as_str(), r))
        .collect();
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(log.num_items());
    for tok in log.item_tokens() {
        match row_of.get(tok.as_str()) {
            Some(&r) => rows.push(r),
            None => missing.push(tok.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    let d = raw.ncols();
    let mut out = Array2::<f32>::zeros((rows.len(), d));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&raw.row(r));
    }
    EmbeddingMatrix::new(out)
}
