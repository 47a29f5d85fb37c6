//! Binary feature file format.
//!
//! Little-endian layout: magic `ATWF`, u32 version (currently 1), u32 row
//! count, u32 dimension, then `rows * dim` f32 values row-major. Values are
//! widened to f64 on load; writing narrows back to f32, so feature values
//! are f32-representable end to end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::pipeline::Modality;

pub const MAGIC: [u8; 4] = *b"ATWF";
pub const VERSION: u32 = 1;

/// Per-snippet action feature vectors for one modality, one row per snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub modality: Modality,
    pub matrix: Matrix,
}

impl FeatureSet {
    pub fn new(modality: Modality, matrix: Matrix) -> Self {
        FeatureSet { modality, matrix }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// New set holding the given rows of `self`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<FeatureSet> {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::invalid(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.matrix.row(i));
        }
        Ok(FeatureSet {
            modality: self.modality,
            matrix: Matrix::from_vec(indices.len(), self.dim(), data)?,
        })
    }
}

/// Write a feature set, narrowing each element to f32.
pub fn write_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    out.write_all(&MAGIC).map_err(io_err)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(set.rows() as u32).to_le_bytes())
        .map_err(io_err)?;
    out.write_all(&(set.dim() as u32).to_le_bytes())
        .map_err(io_err)?;
    for &v in set.matrix.data() {
        out.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Read a feature file, validating magic, version, and payload length.
pub fn read_features(path: &Path, modality: Modality) -> Result<FeatureSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::io(path, e))?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }

    let mut word = [0u8; 4];
    let mut read_u32 = |input: &mut BufReader<File>| -> Result<u32> {
        input
            .read_exact(&mut word)
            .map_err(|e| Error::io(path, e))?;
        Ok(u32::from_le_bytes(word))
    };
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            got: version,
        });
    }
    let rows = read_u32(&mut input)? as usize;
    let dim = read_u32(&mut input)? as usize;

    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let expected = rows * dim * 4;
    if payload.len() != expected {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "{rows}x{dim} header needs {expected} payload bytes, found {}",
                payload.len()
            ),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(FeatureSet {
        modality,
        matrix: Matrix::from_vec(rows, dim, data)?,
    })
}
