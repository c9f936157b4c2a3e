use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::DMatrix;

use super::{IoError, Result};
use crate::spectral::FeatureMatrix;

pub const MATRIX_MAGIC: &[u8; 8] = b"SPECGEO1";
/// Magic, dtype, rows and cols, each 8 bytes.
pub const MATRIX_HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(IoError::BadDtype(other)),
        }
    }

    pub fn size(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serializes `m` row-major. Narrowing to `f32` rounds to nearest.
pub fn encode_matrix(m: &DMatrix<f64>, dtype: Dtype) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + rows * cols * dtype.size() as usize);
    out.extend_from_slice(MATRIX_MAGIC);
    for v in [dtype as u64, rows as u64, cols as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..rows {
        for j in 0..cols {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&m[(i, j)].to_le_bytes()),
            }
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 8 || &bytes[..8] != MATRIX_MAGIC {
        return Err(IoError::BadMagic {
            expected: "SPECGEO1",
        });
    }
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(IoError::SizeMismatch {
            expected: MATRIX_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let dtype = Dtype::from_code(LittleEndian::read_u64(&bytes[8..16]))?;
    let rows = LittleEndian::read_u64(&bytes[16..24]);
    let cols = LittleEndian::read_u64(&bytes[24..32]);
    let payload = &bytes[MATRIX_HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.size()));
    let actual = payload.len() as u64;
    match expected {
        Some(e) if e == actual => {}
        Some(e) => {
            return Err(IoError::SizeMismatch {
                expected: e,
                actual,
            })
        }
        None => {
            return Err(IoError::SizeMismatch {
                expected: u64::MAX,
                actual,
            })
        }
    }
    let (r, c) = (rows as usize, cols as usize);
    let w = dtype.size() as usize;
    Ok(DMatrix::from_fn(r, c, |i, j| {
        let at = (i * c + j) * w;
        match dtype {
            Dtype::F32 => LittleEndian::read_f32(&payload[at..at + 4]) as f64,
            Dtype::F64 => LittleEndian::read_f64(&payload[at..at + 8]),
        }
    }))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_matrix(&bytes)
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix::new(read_matrix(path)?)?)
}

pub fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_matrix_as(m, Dtype::F64, path)
}

pub fn write_matrix_as(m: &DMatrix<f64>, dtype: Dtype, path: &Path) -> Result<()> {
    std::fs::write(path, encode_matrix(m, dtype)).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.5, -2.25, 0.1, 1e-300, f64::MAX, -0.0])
    }

    #[test]
    fn f64_round_trip_is_bitwise() {
        let m = sample();
        let back = decode_matrix(&encode_matrix(&m, Dtype::F64)).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_matrix(&sample(), Dtype::F64);
        assert_eq!(&bytes[..8], b"SPECGEO1");
        assert_eq!(bytes[8..16], 2u64.to_le_bytes());
        assert_eq!(bytes[16..24], 3u64.to_le_bytes());
        assert_eq!(bytes[24..32], 2u64.to_le_bytes());
        // row-major: second value is (0, 1)
        assert_eq!(bytes[40..48], (-2.25f64).to_le_bytes());
        assert_eq!(bytes.len(), 32 + 48);
    }

    #[test]
    fn f32_widens_exactly() {
        let m = DMatrix::from_row_slice(1, 3, &[0.1f32 as f64, 3.5, -7.0]);
        let back = decode_matrix(&encode_matrix(&m, Dtype::F32)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn distinct_errors() {
        let good = encode_matrix(&sample(), Dtype::F64);
        let mut magic = good.clone();
        magic[0] = b'X';
        assert_eq!(decode_matrix(&magic).unwrap_err().code(), "bad_magic");
        let mut dtype = good.clone();
        dtype[8] = 3;
        assert_eq!(decode_matrix(&dtype).unwrap_err(), IoError::BadDtype(3));
        let short = &good[..good.len() - 8];
        assert_eq!(
            decode_matrix(short).unwrap_err(),
            IoError::SizeMismatch {
                expected: 48,
                actual: 40
            }
        );
        let mut long = good.clone();
        long.push(0);
        assert_eq!(decode_matrix(&long).unwrap_err().code(), "size_mismatch");
        let mut huge = good;
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert_eq!(decode_matrix(&huge).unwrap_err().code(), "size_mismatch");
    }
}
