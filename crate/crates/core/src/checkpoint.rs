//! Model checkpoints.
//!
//! Layout:
//!
//! ```text
//! ngramconv-checkpoint 1\n
//! <header length in bytes>\n
//! <TOML header: architecture, optimizer state, tensor table>
//! <little-endian f32 payload: parameters, then Adam first moments, then second moments>
//! ```
//!
//! Values are stored as f32. [`ModelState::round_to_f32`] makes an in-memory
//! state equal to what a reload produces, so save, load and save again yields
//! identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, LayerGraph};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Tensor2};

const MAGIC: &str = "ngramconv-checkpoint 1";

/// How a model was trained: the vector file, its load limit and the split seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub vectors: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors_limit: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ArchitectureSpec,
    pub params: Vec<Tensor2>,
    pub adam: AdamState,
    pub source: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    #[serde(flatten)]
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchitectureSpec,
    adam: AdamHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<Provenance>,
    tensors: Vec<TensorEntry>,
}

impl ModelState {
    /// Fresh optimizer state for `params`.
    pub fn new(spec: ArchitectureSpec, params: Vec<Tensor2>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(adam, &params);
        ModelState {
            spec,
            params,
            adam,
            source: None,
        }
    }

    pub fn graph(&self) -> Result<LayerGraph> {
        let graph = self.spec.build()?;
        graph.check_params(&self.params)?;
        Ok(graph)
    }

    pub fn round_to_f32(&mut self) {
        let tensors = self.params.iter_mut().chain(&mut self.adam.m).chain(&mut self.adam.v);
        for t in tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let graph = self.graph()?;
        let header = Header {
            arch: self.spec.clone(),
            adam: AdamHeader {
                t: self.adam.t,
                config: self.adam.config,
            },
            source: self.source.clone(),
            tensors: graph
                .params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    rows: p.rows,
                    cols: p.cols,
                })
                .collect(),
        };
        let header = toml::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = format!("{MAGIC}\n{}\n{header}", header.len()).into_bytes();
        for t in self.params.iter().chain(&self.adam.m).chain(&self.adam.v) {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (magic, rest) = split_line(bytes)?;
        if magic != MAGIC.as_bytes() {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (len, rest) = split_line(rest)?;
        let len: usize = std::str::from_utf8(len)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("bad header length".into()))?;
        if rest.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let (header, payload) = rest.split_at(len);
        let header = std::str::from_utf8(header).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let header: Header = toml::from_str(header).map_err(|e| Error::Checkpoint(e.message().to_string()))?;

        let graph = header.arch.build()?;
        let expected: Vec<_> = graph.params.iter().map(|p| (p.name.as_str(), p.rows, p.cols)).collect();
        let found: Vec<_> = header.tensors.iter().map(|t| (t.name.as_str(), t.rows, t.cols)).collect();
        if expected != found {
            return Err(Error::Checkpoint("tensor table does not match the architecture".into()));
        }
        let floats: usize = found.iter().map(|(_, r, c)| r * c).sum();
        if payload.len() != 3 * floats * 4 {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                3 * floats * 4
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut read_set = || -> Vec<Tensor2> {
            found
                .iter()
                .map(|&(_, r, c)| Tensor2::from_vec(r, c, values.by_ref().take(r * c).collect()).expect("length checked"))
                .collect()
        };
        let params = read_set();
        let m = read_set();
        let v = read_set();
        Ok(ModelState {
            spec: header.arch,
            params,
            adam: AdamState {
                config: header.adam.config,
                t: header.adam.t,
                m,
                v,
            },
            source: header.source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn split_line(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let pos = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
    Ok((&bytes[..pos], &bytes[pos + 1..]))
}
