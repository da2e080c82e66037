//! `UCEB` embedding files: one modality's features plus identity and view
//! labels per sample.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "UCEB"
//! version    u32      1
//! n          u64      number of records
//! d          u32      feature dimension
//! name_len   u32      byte length of the modality name
//! name       name_len bytes, UTF-8
//! n records: id u64, view u32, d × f32
//! ```
//!
//! Features are stored as `f32`; reading widens them back to `f64`, so a
//! round trip through disk rounds values to single precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"UCEB";
pub const EMBEDDING_VERSION: u32 = 1;

const HEADER_FIXED: usize = 4 + 4 + 8 + 4 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub modality: String,
    pub ids: Vec<u64>,
    pub views: Vec<u32>,
    /// `n × d`.
    pub features: Matrix,
}

impl EmbeddingFile {
    pub fn new(modality: String, ids: Vec<u64>, views: Vec<u32>, features: Matrix) -> Result<Self> {
        if ids.len() != features.rows() || views.len() != features.rows() {
            return Err(Error::Shape(format!(
                "embedding file {modality:?}: {} feature rows, {} ids, {} views",
                features.rows(),
                ids.len(),
                views.len()
            )));
        }
        Ok(Self {
            modality,
            ids,
            views,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = u32::try_from(self.dim())
            .map_err(|_| Error::Format("feature dimension exceeds u32".into()))?;
        let name = self.modality.as_bytes();
        let name_len = u32::try_from(name.len())
            .map_err(|_| Error::Format("modality name too long".into()))?;
        let mut out =
            Vec::with_capacity(HEADER_FIXED + name.len() + self.len() * (12 + 4 * self.dim()));
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        for i in 0..self.len() {
            out.extend_from_slice(&self.ids[i].to_le_bytes());
            out.extend_from_slice(&self.views[i].to_le_bytes());
            for &v in self.features.row(i) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Err(Error::Format(m));
        if bytes.len() < HEADER_FIXED {
            return fail(format!("embedding file truncated: {} bytes", bytes.len()));
        }
        if &bytes[..4] != EMBEDDING_MAGIC {
            return fail(format!("bad embedding magic {:?}", &bytes[..4]));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != EMBEDDING_VERSION {
            return fail(format!("unsupported embedding file version {version}"));
        }
        let n = u64_at(8);
        let d = u32_at(16) as u64;
        let name_len = u32_at(20) as u64;
        let expected = (HEADER_FIXED as u64)
            .checked_add(name_len)
            .and_then(|h| n.checked_mul(12 + 4 * d).and_then(|r| h.checked_add(r)));
        if expected != Some(bytes.len() as u64) {
            return fail(format!(
                "embedding file length {} does not match header (n = {n}, d = {d}, name {name_len} bytes)",
                bytes.len()
            ));
        }
        let (n, d, name_len) = (n as usize, d as usize, name_len as usize);
        let name = std::str::from_utf8(&bytes[HEADER_FIXED..HEADER_FIXED + name_len])
            .map_err(|e| Error::Format(format!("modality name is not UTF-8: {e}")))?
            .to_string();
        let mut ids = Vec::with_capacity(n);
        let mut views = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        let mut o = HEADER_FIXED + name_len;
        for _ in 0..n {
            ids.push(u64_at(o));
            views.push(u32_at(o + 8));
            o += 12;
            for _ in 0..d {
                data.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64);
                o += 4;
            }
        }
        Self::new(name, ids, views, Matrix::from_vec(n, d, data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
