//! Versioned binary persistence for parameter stores and optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "ATSCCKPT" | version u32 | dtype u8 (4=f32, 8=f64)
//! n_stores u32
//!   per store:  name | n_params u32
//!     per param: name | rows u32 | cols u32 | raw values
//! n_moment_groups u32
//!   per group:  name | n_arrays u32 | per array: len u64 | raw values
//! n_scalars u32
//!   per scalar: name | f64
//! ```
//!
//! Strings are u16 length + UTF-8 bytes. Values are raw IEEE-754 in the
//! profile's width, so a round-trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::{NnError, Result};

const MAGIC: &[u8; 8] = b"ATSCCKPT";
const VERSION: u32 = 1;

/// In-memory image of a checkpoint file.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint<S> {
    pub stores: Vec<(String, ParamStore<S>)>,
    pub moments: Vec<(String, Vec<Vec<S>>)>,
    pub scalars: Vec<(String, f64)>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new() -> Self {
        Checkpoint {
            stores: Vec::new(),
            moments: Vec::new(),
            scalars: Vec::new(),
        }
    }

    pub fn store(&self, name: &str) -> Result<&ParamStore<S>> {
        self.stores
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| NnError::BadCheckpoint(format!("missing store {name}")))
    }

    pub fn moment_group(&self, name: &str) -> Result<&Vec<Vec<S>>> {
        self.moments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| NnError::BadCheckpoint(format!("missing moment group {name}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| NnError::BadCheckpoint(format!("missing scalar {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(S::DTYPE_TAG);
        write_u32(&mut out, self.stores.len() as u32);
        for (name, store) in &self.stores {
            write_str(&mut out, name);
            write_u32(&mut out, store.len() as u32);
            for (_, p) in store.iter() {
                write_str(&mut out, &p.name);
                write_u32(&mut out, p.rows as u32);
                write_u32(&mut out, p.cols as u32);
                for &v in &p.values {
                    v.write_le(&mut out);
                }
            }
        }
        write_u32(&mut out, self.moments.len() as u32);
        for (name, arrays) in &self.moments {
            write_str(&mut out, name);
            write_u32(&mut out, arrays.len() as u32);
            for arr in arrays {
                out.extend_from_slice(&(arr.len() as u64).to_le_bytes());
                for &v in arr {
                    v.write_le(&mut out);
                }
            }
        }
        write_u32(&mut out, self.scalars.len() as u32);
        for (name, v) in &self.scalars {
            write_str(&mut out, name);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != MAGIC {
            return Err(NnError::BadCheckpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(NnError::BadCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let dtype = cur.u8()?;
        if dtype != S::DTYPE_TAG {
            return Err(NnError::BadCheckpoint(format!(
                "dtype tag {dtype} does not match active profile ({})",
                S::DTYPE_TAG
            )));
        }
        let mut ckpt = Checkpoint::new();
        let n_stores = cur.u32()?;
        for _ in 0..n_stores {
            let sname = cur.string()?;
            let n_params = cur.u32()?;
            let mut store = ParamStore::new();
            for _ in 0..n_params {
                let pname = cur.string()?;
                let rows = cur.u32()? as usize;
                let cols = cur.u32()? as usize;
                let values = cur.values::<S>(rows * cols)?;
                store
                    .add(&pname, rows, cols, values)
                    .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
            }
            ckpt.stores.push((sname, store));
        }
        let n_groups = cur.u32()?;
        for _ in 0..n_groups {
            let gname = cur.string()?;
            let n_arrays = cur.u32()?;
            let mut arrays = Vec::with_capacity(n_arrays as usize);
            for _ in 0..n_arrays {
                let len = cur.u64()? as usize;
                arrays.push(cur.values::<S>(len)?);
            }
            ckpt.moments.push((gname, arrays));
        }
        let n_scalars = cur.u32()?;
        for _ in 0..n_scalars {
            let name = cur.string()?;
            let v = f64::from_le_bytes(
                cur.take(8)?
                    .try_into()
                    .map_err(|_| NnError::BadCheckpoint("truncated scalar".into()))?,
            );
            ckpt.scalars.push((name, v));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| NnError::BadCheckpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::BadCheckpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| NnError::BadCheckpoint("non-utf8 name".into()))
    }

    fn values<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>> {
        let raw = self.take(n * S::WIDTH)?;
        Ok(raw.chunks_exact(S::WIDTH).map(S::read_le).collect())
    }
}
