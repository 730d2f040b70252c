//! Checkpoint directories: `config.json`, `weights.bin` (f32 little-endian)
//! and a `weights.json` index keyed by parameter name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pantcr_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::model::PanTcr;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const INDEX_FILE: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// Byte offset into `weights.bin`.
    pub offset: usize,
    pub shape: [usize; 3],
    pub dtype: String,
}

pub fn save_checkpoint(model: &PanTcr, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(model.param_count() * 4);
    let mut index = BTreeMap::new();
    for (name, t) in model.params().iter() {
        index.insert(
            name.to_string(),
            IndexEntry {
                offset: bytes.len(),
                shape: [t.c, t.h, t.w],
                dtype: "f32le".into(),
            },
        );
        for &v in &t.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(
        dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&model.cfg)?,
    )?;
    fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    Ok(())
}

/// Rebuilds the model from `config.json` and fills every parameter by name.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<PanTcr> {
    let dir = dir.as_ref();
    let cfg: NetworkConfig = serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    let mut model = PanTcr::new(cfg, 0)?;
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = model.params().name(id).to_string();
        let entry = index
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor named {name}")))?;
        if entry.dtype != "f32le" {
            return Err(Error::Format(format!(
                "{name}: unsupported dtype {}",
                entry.dtype
            )));
        }
        let t = model.params_mut().get_mut(id);
        if entry.shape != [t.c, t.h, t.w] {
            return Err(Error::Validation(format!(
                "{name}: archived shape {:?} differs from model shape {:?}",
                entry.shape,
                [t.c, t.h, t.w]
            )));
        }
        let end = entry.offset + t.len() * 4;
        let raw = bytes
            .get(entry.offset..end)
            .ok_or_else(|| Error::Format(format!("{name}: weights.bin is truncated")))?;
        for (v, chunk) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }
    }
    Ok(model)
}
