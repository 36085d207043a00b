//! Golden tensor files: "CODH" magic, u32 version, u32 rank, u32 extents,
//! little-endian IEEE-754 f32 payload, row-major.

use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"CODH";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"CODH\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("payload length mismatch: header implies {expected} bytes, got {actual}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid tensor header: {0}")]
    BadHeader(String),
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), GoldenError> {
    if let Some(i) = tensor.data().iter().position(|v| !v.is_finite()) {
        return Err(GoldenError::NonFinite(i));
    }
    let mut buf = Vec::with_capacity(16 + 4 * tensor.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &e in tensor.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, GoldenError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(GoldenError::BadHeader("file shorter than header".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(GoldenError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(GoldenError::BadVersion(version));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + 4 * rank;
    if bytes.len() < header_end {
        return Err(GoldenError::BadHeader(format!(
            "truncated extents: rank {rank}"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 12 + 4 * i;
        shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count: usize = shape.iter().product();
    let expected = 4 * count;
    let actual = bytes.len() - header_end;
    if actual != expected {
        return Err(GoldenError::PayloadLength { expected, actual });
    }
    let data = bytes[header_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| GoldenError::BadHeader(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_tensor;

    #[test]
    fn round_trip_is_identity_at_f32() {
        let dir = std::env::temp_dir().join("codh-golden-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.codh");
        let t = normal_tensor(3, "g", vec![2, 3, 4]);
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn scalar_rank_zero() {
        let dir = std::env::temp_dir().join("codh-golden-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scalar.codh");
        write_tensor(&path, &Tensor::scalar(2.5)).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back.data(), &[2.5]);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16);
    }

    #[test]
    fn truncated_payload_is_error() {
        let dir = std::env::temp_dir().join("codh-golden-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.codh");
        write_tensor(&path, &normal_tensor(0, "t", vec![4])).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(GoldenError::PayloadLength { .. })
        ));
    }

    #[test]
    fn bad_magic_is_error() {
        let dir = std::env::temp_dir().join("codh-golden-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("magic.codh");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_tensor(&path), Err(GoldenError::BadMagic(_))));
    }
}
