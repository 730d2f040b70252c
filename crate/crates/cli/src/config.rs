//! Run configuration: JSON files layered with dot-path overrides.

use std::fs;
use std::path::Path;

use pantcr_core::cloud::{SplitCounts, SynthConfig};
use pantcr_core::{Error, Result};
use pantcr_net::{NetworkConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Copied into `synth.seed` and `train.seed` on resolution.
    pub seed: u64,
    /// Number of procedural source scenes for `synth`.
    pub scenes: usize,
    pub counts: SplitCounts,
    pub synth: SynthConfig,
    pub net: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 2,
            counts: SplitCounts {
                train: 32,
                val: 8,
                test_reduced: 8,
                test_full: 1,
            },
            synth: SynthConfig::default(),
            net: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then each `key=value` in `sets`, then `seed`.
    pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut tree = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Argument(format!("cannot read config {}: {e}", path.display()))
            })?;
            let mut doc: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("config {}: {e}", path.display())))?;
            // A previous run.json is accepted as is.
            if doc.get("subcommand").is_some() {
                if let Some(inner) = doc.get_mut("config") {
                    doc = inner.take();
                }
            }
            merge(&mut tree, &doc, "")?;
        }
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("override {set:?} is not key=value")))?;
            apply_override(&mut tree, key.trim(), raw)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Validation(format!("config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if self.synth.scale_ratio != self.net.scale_ratio {
            return Err(Error::Validation(format!(
                "synth.scale_ratio {} differs from net.scale_ratio {}",
                self.synth.scale_ratio, self.net.scale_ratio
            )));
        }
        Ok(())
    }
}

/// Sets one dot-path key. Only keys already present in `tree` are accepted.
/// The value is parsed as JSON, falling back to a bare string.
pub fn apply_override(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key.split('.').any(|seg| seg.is_empty()) {
        return Err(Error::Argument(format!("malformed override key {key:?}")));
    }
    let mut node = tree;
    for seg in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(seg))
            .ok_or_else(|| Error::Argument(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<()> {
    let Some(fields) = patch.as_object() else {
        return Err(Error::Format(format!(
            "config `{prefix}` must be an object"
        )));
    };
    for (k, v) in fields {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let slot = base
            .as_object_mut()
            .and_then(|m| m.get_mut(k))
            .ok_or_else(|| Error::Argument(format!("unknown config key `{path}`")))?;
        if slot.is_object() && v.is_object() {
            merge(slot, v, &path)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let sets = vec![
            "net.base_width=8".to_string(),
            "net.ablation.se_mode=off".to_string(),
        ];
        let cfg = RunConfig::resolve(None, &sets, Some(3)).unwrap();
        assert_eq!(cfg.net.base_width, 8);
        assert_eq!(cfg.net.ablation.se_mode, pantcr_net::config::SeMode::Off);
        assert_eq!((cfg.seed, cfg.train.seed, cfg.synth.seed), (3, 3, 3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for set in ["net.base_widht=8", "nope=1", "net..x=1", "train.epochs.x=2"] {
            let err = RunConfig::resolve(None, &[set.to_string()], None).unwrap_err();
            assert!(err.is_validation(), "{set}: {err}");
        }
    }

    #[test]
    fn ill_typed_values_are_rejected() {
        let err = RunConfig::resolve(None, &["train.epochs=many".into()], None).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn file_merge_rejects_unknown_nested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"synth": {"patch_sise": 32}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&path), &[], None)
            .unwrap_err()
            .is_validation());
        fs::write(&path, r#"{"synth": {"patch_size": 32}, "seed": 4}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[], None).unwrap();
        assert_eq!((cfg.synth.patch_size, cfg.synth.seed), (32, 4));
    }
}
