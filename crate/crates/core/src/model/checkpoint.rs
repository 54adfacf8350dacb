//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TKGCKPT1"
//! u64 manifest_len, manifest bytes (UTF-8)
//! u64 array_count
//! per array: u32 name_len, name bytes, u32 ndim, ndim × u64 dims, f64 data
//! ```
//!
//! The manifest holds `key = value` lines, then a `[tree]` line followed by
//! the tree file, which records the global node ordering.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"TKGCKPT1";
const TREE_MARKER: &str = "[tree]";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no array `{0}`")]
    MissingArray(String),
    #[error("checkpoint manifest has no key `{0}`")]
    MissingKey(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub manifest: Vec<(String, String)>,
    pub tree: String,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.manifest.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CheckpointError> {
        self.get(key).ok_or_else(|| CheckpointError::MissingKey(key.to_string()))
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        for (k, v) in &self.manifest {
            manifest.push_str(k);
            manifest.push_str(" = ");
            manifest.push_str(v);
            manifest.push('\n');
        }
        manifest.push_str(TREE_MARKER);
        manifest.push('\n');
        manifest.push_str(&self.tree);

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::Corrupt("bad magic".into()));
        }
        let mlen = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(mlen)?).map_err(|_| CheckpointError::Corrupt("manifest is not UTF-8".into()))?;
        let (head, tree) = match text.find(&format!("{TREE_MARKER}\n")) {
            Some(i) => (&text[..i], &text[i + TREE_MARKER.len() + 1..]),
            None => return Err(CheckpointError::Corrupt("manifest lacks a tree section".into())),
        };
        let mut manifest = Vec::new();
        for line in head.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| CheckpointError::Corrupt(format!("bad manifest line `{line}`")))?;
            manifest.push((k.to_string(), v.to_string()));
        }
        let count = r.u64()? as usize;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| CheckpointError::Corrupt("array name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let dims: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let (rows, cols) = match dims[..] {
                [n] => (1, n),
                [a, b] => (a, b),
                _ => return Err(CheckpointError::Corrupt(format!("array `{name}` has {ndim} dimensions"))),
            };
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| CheckpointError::Corrupt(format!("array `{name}` overruns the file")))?;
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t = Tensor::new(rows, cols, data).map_err(|e| CheckpointError::Corrupt(format!("array `{name}`: {e}")))?;
            arrays.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            manifest,
            tree: tree.to_string(),
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            manifest: vec![("mode".into(), "topickg".into()), ("beta".into(), "50".into())],
            tree: "NODE 0 0 a\nNODE 1 1 t\nEDGE 1 0\n".into(),
            arrays: vec![
                ("embed".into(), Tensor::new(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()),
                ("b".into(), Tensor::row(vec![3.0])),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.manifest, c.manifest);
        assert_eq!(back.tree, c.tree);
        for ((n1, a), (n2, b)) in c.arrays.iter().zip(&back.arrays) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 20, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }
}
