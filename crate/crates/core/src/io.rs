//! Dense `f32` matrix container used for weights, inputs and dequantized
//! output.
//!
//! Layout (little-endian): `ANYT` magic, `u32` version (1), `u32` rows,
//! `u32` cols, then `rows * cols` row-major `f32` values. Nothing follows.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pack::write_atomic;

pub const TENSOR_MAGIC: [u8; 4] = *b"ANYT";
pub const TENSOR_VERSION: u32 = 1;
pub const TENSOR_HEADER_LEN: usize = 16;

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes(buf: &[u8]) -> Result<Matrix> {
    if buf.len() < TENSOR_HEADER_LEN {
        return Err(Error::Truncated {
            offset: buf.len(),
            needed: TENSOR_HEADER_LEN - buf.len(),
        });
    }
    let word = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != TENSOR_MAGIC {
        return Err(Error::MagicMismatch { found: magic });
    }
    if word(4) != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion(word(4).min(u32::from(u16::MAX)) as u16));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let need = TENSOR_HEADER_LEN + 4 * rows * cols;
    if buf.len() < need {
        return Err(Error::Truncated {
            offset: buf.len(),
            needed: need - buf.len(),
        });
    }
    if buf.len() > need {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - need)));
    }
    let data = buf[TENSOR_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &matrix_to_bytes(m))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    matrix_from_bytes(&std::fs::read(path)?)
}
