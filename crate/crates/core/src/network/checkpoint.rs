//! Single-file binary checkpoint.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (model config, scene registry, parameter layout, training
//! extras), then the parameters as little-endian `f32`, followed by the
//! optimizer moments when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::params::ParamSpec;
use super::ModelConfig;
use crate::dataset::Attribute;
use crate::error::{Error, Result};
use crate::scene::SceneRegistry;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FHIQACKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Everything stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointExtras {
    /// Number of completed epochs.
    pub epoch: usize,
    pub attribute: Option<Attribute>,
    /// Serialized training state, opaque to this module.
    pub train_state: Option<serde_json::Value>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    registry: SceneRegistry,
    layout: Vec<ParamSpec>,
    param_count: usize,
    epoch: usize,
    attribute: Option<Attribute>,
    train_state: Option<serde_json::Value>,
    optimizer_step: Option<u64>,
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, extras: &CheckpointExtras) -> Result<()> {
    let path = path.as_ref();
    let n = model.params().len();
    if let Some(opt) = &extras.optimizer {
        if opt.m.len() != n || opt.v.len() != n {
            return Err(Error::Checkpoint("optimizer state does not match parameter count".into()));
        }
    }
    let header = Header {
        config: model.config().clone(),
        registry: model.registry().clone(),
        layout: model.params().specs().to_vec(),
        param_count: n,
        epoch: extras.epoch,
        attribute: extras.attribute,
        train_state: extras.train_state.clone(),
        optimizer_step: extras.optimizer.as_ref().map(|o| o.step),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + json.len() + n * 12);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    push_f32s(&mut buf, model.params().values());
    if let Some(opt) = &extras.optimizer {
        push_f32s(&mut buf, &opt.m);
        push_f32s(&mut buf, &opt.v);
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointExtras)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut model = Model::new(header.config, header.registry, 0)?;
    let values = r.f32s(header.param_count)?;
    model.params_mut().load(&header.layout, values)?;
    let optimizer = match header.optimizer_step {
        Some(step) => Some(OptimizerState {
            step,
            m: r.f32s(header.param_count)?,
            v: r.f32s(header.param_count)?,
        }),
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((
        model,
        CheckpointExtras {
            epoch: header.epoch,
            attribute: header.attribute,
            train_state: header.train_state,
            optimizer,
        },
    ))
}
