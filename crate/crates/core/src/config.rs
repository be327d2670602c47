//! Run configuration: presets, JSON files and dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{InitScheme, ModelConfig};
use crate::tasks::{LossWeights, Objective};
use crate::tensor::AdamWConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interleave {
    /// One objective per step, cycling through the active objectives.
    #[default]
    RoundRobin,
    /// Every active objective on each batch, summed into one step.
    Joint,
}

impl std::str::FromStr for Interleave {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round-robin" => Ok(Interleave::RoundRobin),
            "joint" => Ok(Interleave::Joint),
            _ => Err(Error::usage(format!("unknown interleave `{s}` (round-robin|joint)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::usage(format!("unknown preset `{s}` (desk|full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    /// Directory for checkpoints, the loss log and the manifest.
    pub out_dir: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub schedule: Schedule,
    pub loss_weights: LossWeights,
    pub tasks: Vec<Objective>,
    pub use_event: bool,
    pub interleave: Interleave,
    pub init: InitScheme,
    pub paths: Paths,
}

impl RunConfig {
    pub fn preset(preset: Preset, stage: Stage) -> Self {
        let mut model = match preset {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::full(),
        };
        model.dropout_rate = match stage {
            Stage::Pretrain => 0.1,
            Stage::Finetune => 0.3,
        };
        let (epochs, batch_size) = match (preset, stage) {
            (Preset::Desk, Stage::Pretrain) => (5, 16),
            (Preset::Desk, Stage::Finetune) => (10, 16),
            (Preset::Full, Stage::Pretrain) => (20, 256),
            (Preset::Full, Stage::Finetune) => (30, 256),
        };
        Self {
            model,
            optimizer: AdamWConfig::default(),
            schedule: Schedule {
                epochs,
                batch_size,
                seed: 0,
                max_steps: None,
                shuffle: true,
            },
            loss_weights: LossWeights::default(),
            tasks: match stage {
                Stage::Pretrain => Objective::ALL.to_vec(),
                Stage::Finetune => vec![Objective::Kcg],
            },
            use_event: true,
            interleave: Interleave::RoundRobin,
            init: InitScheme::Normal,
            paths: Paths::default(),
        }
    }

    /// Preset, then the JSON file (deep-merged), then dotted overrides such
    /// as `("optimizer.lr", "1e-3")`.
    pub fn resolve(
        preset: Preset,
        stage: Stage,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut v = serde_json::to_value(Self::preset(preset, stage)).expect("serializable config");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| Error::usage(format!("{}: {e}", path.display())))?;
            merge(&mut v, patch);
        }
        for (key, raw) in overrides {
            set_dotted(&mut v, key, raw)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(v).map_err(|e| Error::usage(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::usage("no active task"));
        }
        if self.schedule.batch_size == 0 {
            return Err(Error::usage("schedule.batch_size must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(o.eps > 0.0) || o.weight_decay < 0.0 {
            return Err(Error::usage("optimizer: lr and eps must be positive, weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&o.betas.0) || !(0.0..1.0).contains(&o.betas.1) {
            return Err(Error::usage("optimizer.betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable config")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Sets `a.b.c` to `raw`, parsed as JSON when possible (so `1e-3`, `true`
/// and `[1,2]` keep their types) and as a string otherwise.
pub fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::usage(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(Error::usage(format!("unknown configuration key `{key}`")));
        }
        cur = obj.get_mut(*part).expect("checked key");
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Parses `kcg,mlm,...`.
pub fn parse_tasks(s: &str) -> Result<Vec<Objective>> {
    let mut out: Vec<Objective> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let o: Objective = part.parse()?;
        if !out.contains(&o) {
            out.push(o);
        }
    }
    if out.is_empty() {
        return Err(Error::usage("empty task list"));
    }
    out.sort();
    Ok(out)
}
