//! Single-file checkpoint archive.
//!
//! ```text
//! b"UWNET-CKPT-1\n"
//! u64 little-endian header length
//! header (JSON): step, per-role network specs, tensor table, free-form meta
//! tensor payload: little-endian values, in tensor-table order
//! ```
//!
//! Tensors are stored in name order, so saving a loaded checkpoint
//! reproduces the original bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{NetSpec, NetworkParams, Role};

pub const CHECKPOINT_MAGIC: &[u8] = b"UWNET-CKPT-1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    step: u64,
    specs: BTreeMap<Role, NetSpec>,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Completed optimizer steps.
    pub step: u64,
    pub specs: BTreeMap<Role, NetSpec>,
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: serde_json::Value,
}

fn dtype_tag(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported tensor dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat
            .to_vec1::<f32>()?
            .into_iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        DType::F64 => flat
            .to_vec1::<f64>()?
            .into_iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        other => return Err(Error::Checkpoint(format!("unsupported tensor dtype {other:?}"))),
    })
}

fn tensor_from_bytes(bytes: &[u8], dtype: &str, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let dev = Device::Cpu;
    match dtype {
        "f32" if bytes.len() == n * 4 => {
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(Tensor::from_vec(v, shape, &dev)?)
        }
        "f64" if bytes.len() == n * 8 => {
            let v: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Tensor::from_vec(v, shape, &dev)?)
        }
        _ => Err(Error::Checkpoint(format!(
            "tensor of dtype {dtype} and shape {shape:?} does not match {} payload bytes",
            bytes.len()
        ))),
    }
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Self {
            step,
            specs: BTreeMap::new(),
            tensors: BTreeMap::new(),
            meta: serde_json::Value::Null,
        }
    }

    /// Add every parameter of `params` under `<role>/<name>`.
    pub fn insert_network(&mut self, params: &NetworkParams) {
        self.specs.insert(params.role, params.spec.clone());
        for (name, var) in params.vars() {
            self.tensors
                .insert(format!("{}/{name}", params.role.tag()), var.as_tensor().clone());
        }
    }

    /// Parameters of one network as fresh variables.
    pub fn network(&self, role: Role) -> Result<NetworkParams> {
        let spec = self
            .specs
            .get(&role)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no {} network", role.tag())))?
            .clone();
        let prefix = format!("{}/", role.tag());
        let mut vars = BTreeMap::new();
        for (name, t) in self.tensors.range(prefix.clone()..) {
            let Some(leaf) = name.strip_prefix(&prefix) else { break };
            vars.insert(leaf.to_string(), candle_core::Var::from_tensor(t)?);
        }
        if vars.is_empty() {
            return Err(Error::Checkpoint(format!("no parameters stored for {}", role.tag())));
        }
        Ok(NetworkParams::new(role, spec, vars))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let bytes = tensor_bytes(t)?;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype_tag(t.dtype())?.to_string(),
                shape: t.dims().to_vec(),
                offset: payload.len() as u64,
                nbytes: bytes.len() as u64,
            });
            payload.extend_from_slice(&bytes);
        }
        let header = Header {
            step: self.step,
            specs: self.specs.clone(),
            tensors: entries,
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| Error::Checkpoint("bad magic: not a UWNET-CKPT-1 file".into()))?;
        if rest.len() < 8 {
            return Err(Error::Checkpoint("truncated header length".into()));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let (header, payload) = rest.split_at(len);
        let header: Header =
            serde_json::from_slice(header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let start = e.offset as usize;
            let end = start + e.nbytes as usize;
            let bytes = payload
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} out of bounds", e.name)))?;
            tensors.insert(e.name, tensor_from_bytes(bytes, &e.dtype, &e.shape)?);
        }
        Ok(Self {
            step: header.step,
            specs: header.specs,
            tensors,
            meta: header.meta,
        })
    }

    /// Write to a sibling temporary file, sync, then rename over `path`, so an
    /// interrupted write never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.partial");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
