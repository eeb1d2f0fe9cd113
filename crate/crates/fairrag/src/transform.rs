//! Trainable linear transform applied to both query and document
//! embeddings before cosine scoring.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{FairRagError, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 4] = b"FRWT";
const VERSION: u32 = 1;

/// Square matrix W, row-major, applied as `W * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTransform {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl QueryTransform {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.dim)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(v).map(|(w, x)| w * x).sum();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.dim * self.dim {
            return Err(FairRagError::DimensionMismatch {
                expected: self.dim * self.dim,
                got: self.data.len(),
            });
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(FairRagError::NonFinite("transform matrix"));
        }
        Ok(())
    }

    /// Checkpoint format: magic, version, dim, then dim*dim row-major
    /// little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.data.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(FairRagError::MissingFile(path.to_path_buf()));
        }
        let mut reader = BufReader::new(File::open(path)?);
        let mut head = [0u8; 12];
        reader.read_exact(&mut head).map_err(|_| FairRagError::BadFormat {
            path: path.to_path_buf(),
            detail: "truncated header".into(),
        })?;
        if &head[0..4] != MAGIC {
            return Err(FairRagError::BadFormat {
                path: path.to_path_buf(),
                detail: "bad magic".into(),
            });
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(FairRagError::BadFormat {
                path: path.to_path_buf(),
                detail: format!("unsupported version {version}"),
            });
        }
        let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut data = vec![0.0f64; dim * dim];
        let mut bytes = vec![0u8; dim * dim * 8];
        reader.read_exact(&mut bytes).map_err(|_| FairRagError::BadFormat {
            path: path.to_path_buf(),
            detail: "truncated matrix".into(),
        })?;
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        let t = Self { dim, data };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_apply_is_noop() {
        let t = QueryTransform::identity(3);
        let v = vec![1.0, -2.0, 0.5];
        assert_eq!(t.apply(&v), v);
    }

    #[test]
    fn apply_matches_hand_multiplication() {
        let t = QueryTransform {
            dim: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(t.apply(&[1.0, 1.0]), vec![3.0, 7.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut t = QueryTransform::identity(4);
        t.set(1, 2, -0.25);
        t.set(3, 0, 7.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        t.save(&path).unwrap();
        assert_eq!(QueryTransform::load(&path).unwrap(), t);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        std::fs::write(&path, b"XXXX0000000000000000").unwrap();
        assert!(matches!(
            QueryTransform::load(&path),
            Err(FairRagError::BadFormat { .. })
        ));
    }
}
