//! Run configuration: a named preset, deep-merged with a user JSON file,
//! then overridden by command-line flags.
//!
//! ```json
//! {
//!   "preset": "tiny-test",
//!   "model": { ...MaesilConfig fields... },
//!   "train": { "lr": 0.001, "betas": [0.9, 0.95], "eps": 1e-8,
//!              "weight_decay": 0.05, "steps": 500, "batch_size": 4,
//!              "run_seed": 0, "log_every": 10, "grad_clip": null },
//!   "data": { "inputs": ["cache/a.json", "cache/"] },
//!   "mask_preset": null,
//!   "baseline": null,
//!   "out_dir": "runs/tiny"
//! }
//! ```
//!
//! Objects merge key by key; any other value replaces the preset's.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use maesil::masking::MaskRatios;
use maesil::model::{BaselineConfig, MaesilConfig};
use maesil::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Usage;

pub const PRESETS: [&str; 3] = ["paper-stages", "paper-total-75", "tiny-test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Cached-volume sidecars (`.json`) or directories holding them.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub model: MaesilConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Overrides `model.mask` when set.
    #[serde(default)]
    pub mask_preset: Option<String>,
    /// Train the comparison autoencoder on the same batches when set.
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    pub out_dir: PathBuf,
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let (model, train) = match name {
        "paper-stages" | "paper-total-75" => {
            let mut m = MaesilConfig::full();
            m.mask = MaskRatios::from_preset(name)?;
            (m, TrainConfig::default())
        }
        "tiny-test" => (
            MaesilConfig::tiny(),
            TrainConfig {
                lr: 1e-3,
                steps: 500,
                batch_size: 4,
                ..TrainConfig::default()
            },
        ),
        _ => return None,
    };
    Some(RunConfig {
        preset: name.into(),
        model,
        train: TrainConfig {
            preset: name.into(),
            ..train
        },
        data: DataConfig { inputs: Vec::new() },
        mask_preset: None,
        baseline: None,
        out_dir: PathBuf::from("runs").join(name),
    })
}

pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub steps: Option<u64>,
}

fn unknown_preset(name: &str) -> anyhow::Error {
    Usage(format!("unknown preset {name:?} (known: {})", PRESETS.join(", "))).into()
}

/// Resolve preset, file and flags into a validated configuration.
pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    let user: Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let name = ov
        .preset
        .clone()
        .or_else(|| user.get("preset").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| "tiny-test".into());
    let base = preset(&name).ok_or_else(|| unknown_preset(&name))?;
    let mut merged = serde_json::to_value(&base).context("serializing preset")?;
    merge(&mut merged, user);
    merged["preset"] = Value::String(name.clone());
    let mut cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Usage(format!("config: {e}")))?;

    if let Some(mp) = &cfg.mask_preset {
        cfg.model.mask = MaskRatios::from_preset(mp).ok_or_else(|| unknown_preset(mp))?;
    }
    if let Some(s) = ov.seed {
        cfg.train.run_seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.out_dir = o.clone();
    }
    if let Some(n) = ov.steps {
        cfg.train.steps = n;
    }
    cfg.train.preset = name;
    cfg.model.validate().map_err(|e| Usage(e.to_string()))?;
    cfg.train.validate().map_err(|e| Usage(e.to_string()))?;
    if let Some(b) = &cfg.baseline {
        b.validate().map_err(|e| Usage(e.to_string()))?;
        if b.patch_edge != cfg.model.patch_edge {
            return Err(Usage(format!(
                "baseline patch edge {} differs from model patch edge {}",
                b.patch_edge, cfg.model.patch_edge
            ))
            .into());
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn presets_resolve() {
        for p in PRESETS {
            let cfg = resolve(
                None,
                &Overrides {
                    preset: Some(p.into()),
                    ..Overrides::default()
                },
            )
            .unwrap();
            assert_eq!(cfg.preset, p);
        }
        let c = preset("paper-total-75").unwrap();
        assert_eq!(c.model.mask, MaskRatios::PAPER_TOTAL_75);
        assert!(preset("nope").is_none());
    }

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"train": {"lr": 1.0, "steps": 3}, "x": [1, 2]});
        merge(&mut a, json!({"train": {"steps": 9}, "x": [3]}));
        assert_eq!(a, json!({"train": {"lr": 1.0, "steps": 9}, "x": [3]}));
    }

    #[test]
    fn flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"train": {"run_seed": 3, "steps": 7}, "mask_preset": "paper-total-75"}"#,
        )
        .unwrap();
        let cfg = resolve(
            Some(&p),
            &Overrides {
                seed: Some(11),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.train.run_seed, 11);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.model.mask, MaskRatios::PAPER_TOTAL_75);
    }

    #[test]
    fn unknown_fields_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"trian": {}}"#).unwrap();
        let err = resolve(Some(&p), &Overrides::default()).unwrap_err();
        assert!(err.downcast_ref::<Usage>().is_some());
    }
}
