//! `KDAL` container: magic, u32 version, length-prefixed JSON metadata, then
//! a table of named f64 tensors, all little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamSet};
use crate::encoder::{EncoderSpec, HeadSpec, LossKind};
use crate::error::{Error, Result};
use crate::knowledge::KnowEncoderSpec;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 4] = b"KDAL";
pub const FORMAT_VERSION: u32 = 1;
pub const KNOWLEDGE_TENSOR: &str = "knowledge/E_F";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: Option<EncoderSpec>,
    pub head: Option<HeadSpec>,
    pub loss: Option<LossKind>,
    pub know_encoder: Option<KnowEncoderSpec>,
    pub seed: u64,
    /// Epoch (1-based) the parameters were taken from; 0 if untrained.
    pub epoch: usize,
    pub val_auprc: Option<f64>,
    /// Extra key/value notes (rule ids, config digest, ...).
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Matrix>,
}

#[derive(Serialize, Deserialize)]
struct StoredMeta {
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorInfo>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert_params(&mut self, params: &ParamSet) {
        for (name, value) in params.iter() {
            self.tensors.insert(name.to_string(), value.clone());
        }
    }

    /// Tensors whose names start with `prefix`, as a fresh parameter set.
    pub fn params(&self, prefix: &str) -> ParamSet {
        let mut ps = ParamSet::new();
        for (name, value) in self.tensors.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            ps.insert(name.clone(), value.clone()).expect("unique names");
        }
        ps
    }

    pub fn knowledge(&self) -> Option<&Matrix> {
        self.tensors.get(KNOWLEDGE_TENSOR)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let stored = StoredMeta {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, m)| TensorInfo {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let meta = serde_json::to_vec_pretty(&stored)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a KDAL container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.u64()? as usize;
        let stored: StoredMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut tensors = BTreeMap::new();
        while r.pos < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len() - r.pos))
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor `{name}`")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors.insert(name.clone(), Matrix::new(rows, cols, data)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        if tensors.len() != stored.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "metadata lists {} tensors but the table holds {}",
                stored.tensors.len(),
                tensors.len()
            )));
        }
        for info in &stored.tensors {
            match tensors.get(&info.name) {
                Some(m) if m.shape() == (info.rows, info.cols) => {}
                Some(m) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{}` is {:?}, metadata says {}x{}",
                        info.name,
                        m.shape(),
                        info.rows,
                        info.cols
                    )))
                }
                None => return Err(Error::Checkpoint(format!("tensor `{}` missing", info.name))),
            }
        }
        Ok(Checkpoint {
            meta: stored.meta,
            tensors,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ck.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
