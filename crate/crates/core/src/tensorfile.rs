//! Named FP32 tensor files used as `pack` input.
//!
//! ```text
//! "RMWT" | u32 count | per tensor:
//!     u16 name length, name (UTF-8), u8 ndim (1 or 2), u32 dims[ndim],
//!     f32 data, row-major
//! ```
//!
//! All integers and floats are little-endian. A 1-D tensor loads as a
//! single-row matrix.

use std::collections::HashSet;

use thiserror::Error;

use crate::romimage::NamedMatrix;

pub const TENSOR_MAGIC: [u8; 4] = *b"RMWT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorFileError {
    #[error("bad magic: not a tensor file")]
    BadMagic,
    #[error("tensor file truncated")]
    Truncated,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("tensor {0:?}: unsupported rank {1}")]
    BadRank(String, u8),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor {0:?}")]
    Duplicate(String),
    #[error("tensor {0:?} holds a non-finite value")]
    NonFinite(String),
    #[error("tensor {0:?} does not fit the format")]
    TooLarge(String),
}

pub fn write_tensors(tensors: &[NamedMatrix]) -> Result<Vec<u8>, TensorFileError> {
    let mut out = TENSOR_MAGIC.to_vec();
    out.extend((tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize || t.rows > u32::MAX as usize || t.cols > u32::MAX as usize {
            return Err(TensorFileError::TooLarge(t.name.clone()));
        }
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name);
        if t.rows == 1 {
            out.push(1);
        } else {
            out.push(2);
            out.extend((t.rows as u32).to_le_bytes());
        }
        out.extend((t.cols as u32).to_le_bytes());
        for &x in &t.data {
            out.extend((x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorFileError> {
        if self.0.len() < n {
            return Err(TensorFileError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, TensorFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<NamedMatrix>, TensorFileError> {
    if bytes.len() < 4 || bytes[..4] != TENSOR_MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    let mut c = Cursor(&bytes[4..]);
    let count = c.u32()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| TensorFileError::BadName)?.to_string();
        let ndim = c.take(1)?[0];
        let (rows, cols) = match ndim {
            1 => (1, c.u32()? as usize),
            2 => (c.u32()? as usize, c.u32()? as usize),
            _ => return Err(TensorFileError::BadRank(name, ndim)),
        };
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or(TensorFileError::Truncated)?;
        let data: Vec<f64> =
            c.take(n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorFileError::NonFinite(name));
        }
        if !seen.insert(name.clone()) {
            return Err(TensorFileError::Duplicate(name));
        }
        out.push(NamedMatrix::new(name, rows, cols, data));
    }
    if !c.0.is_empty() {
        return Err(TensorFileError::TrailingBytes(c.0.len()));
    }
    Ok(out)
}
