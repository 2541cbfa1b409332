//! Pipeline configuration: built-in defaults, then the JSON file, then
//! `CVM_<SECTION>_<KEY>` environment overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use cvm_core::model::ModelConfig;
use cvm_core::preprocess::SplitSpec;
use cvm_core::synthetic::SyntheticSpec;
use cvm_core::training::TrainSchedule;
use cvm_core::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw cube. When absent, the scene described by the `synthetic`
    /// section is generated in memory.
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Fixed training-pixel mask; without it the split is stratified random.
    pub train_mask: Option<PathBuf>,
    /// Class count. Taken from the label file when absent.
    pub num_classes: Option<usize>,
    pub patch_size: usize,
    pub pca_bands: usize,
    pub pca_stride: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            cube: None,
            labels: None,
            train_mask: None,
            num_classes: None,
            patch_size: 9,
            pca_bands: 20,
            pca_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// JSON object mapping label ids to `[r, g, b]`.
    pub palette: Option<PathBuf>,
    /// Classify every pixel of the scene rather than only labeled ones.
    pub full_scene: bool,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            palette: None,
            full_scene: true,
            batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainSchedule,
    pub eval: EvalSection,
    pub run: RunSection,
    pub synthetic: SyntheticSpec,
}

/// Keys whose override values are always taken as plain strings.
const STRING_KEYS: [(&str, &str); 5] = [
    ("data", "cube"),
    ("data", "labels"),
    ("data", "train_mask"),
    ("eval", "palette"),
    ("run", "output_dir"),
];

/// Command-line flags that override the resolved file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seed_scene: bool,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl PipelineConfig {
    /// Resolves the configuration from `path` and the given environment.
    pub fn resolve(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &Overrides,
    ) -> Result<Self> {
        let mut value = serde_json::to_value(PipelineConfig::default())?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            if !file.is_object() {
                return Err(config_err(format!("{}: top level must be an object", path.display())));
            }
            merge(&mut value, file);
        }
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with("CVM_")).collect();
        env.sort();
        for (key, raw) in env {
            apply_env(&mut value, &key, &raw)?;
        }
        let mut cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| config_err(e.to_string()))?;
        if let Some(seed) = flags.seed {
            if flags.seed_scene {
                cfg.synthetic.seed = seed;
            } else {
                cfg.run.seeds = vec![seed];
            }
        }
        if let Some(out) = &flags.out {
            cfg.run.output_dir = out.clone();
        }
        if let Some(workers) = flags.workers {
            cfg.run.workers = workers;
        }
        Ok(cfg)
    }

    /// Architecture for the configured patch size, band count and classes.
    pub fn model_for(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            patch_size: self.data.patch_size,
            input_bands: self.data.pca_bands,
            num_classes,
            ..self.model.clone()
        }
    }
}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Error::Config(msg.into()))
}

/// Recursively overlays `over` onto `base`; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_env(value: &mut Value, var: &str, raw: &str) -> Result<()> {
    let rest = var.trim_start_matches("CVM_").to_ascii_lowercase();
    let root: &mut Map<String, Value> = value.as_object_mut().expect("config root is an object");
    let (section, key) = rest
        .split_once('_')
        .filter(|(s, _)| root.contains_key(*s))
        .ok_or_else(|| config_err(format!("environment variable {var} names no config section")))?;
    let string_typed =
        STRING_KEYS.contains(&(section, key)) || matches!(root[section].get(key), Some(Value::String(_)));
    let parsed = if string_typed {
        Value::String(raw.to_string())
    } else {
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
    };
    root[section]
        .as_object_mut()
        .expect("config sections are objects")
        .insert(key.to_string(), parsed);
    Ok(())
}
