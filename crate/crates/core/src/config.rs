//! Run configuration: defaults, overlaid by an optional JSON file, overlaid
//! by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::BenchConfig;
use crate::flow::{CfgWeights, SamplerConfig};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub run_root: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub guidance: CfgWeights,
    pub bench: BenchConfig,
    pub bench_cases: usize,
    pub bench_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            run_root: PathBuf::from("run"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            guidance: CfgWeights::default(),
            bench: BenchConfig::default(),
            bench_cases: 50,
            bench_seed: 1_000_000,
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
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

/// Sets `a.b.c` in a JSON object tree, creating objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut patch = value;
    for key in path.rsplit('.') {
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(root, patch);
}

/// Defaults, then `file`, then each `(dotted.path, value)` override.
pub fn resolve<T: Serialize + serde::de::DeserializeOwned + Default>(
    file: Option<&Path>,
    overrides: &[(&str, Value)],
) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut v, patch);
    }
    for (path, value) in overrides {
        set_path(&mut v, path, value.clone());
    }
    serde_json::from_value(v).map_err(|e| Error::invalid(format!("bad configuration: {e}")))
}

impl RunConfig {
    /// Aligns the scene grid and seeds with the model, so one `--seed`
    /// drives everything.
    pub fn normalize(mut self) -> Self {
        let s = &mut self.train.scene;
        s.frames = self.model.frames;
        s.height = self.model.height;
        s.width = self.model.width;
        s.channels = self.model.channels;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self.sampler.seed = seed;
        self
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run_root.join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::invalid("run name must be a plain directory name"));
        }
        self.model.validate()?;
        self.train.validate(&self.model)?;
        self.sampler.validate()?;
        self.guidance.validate()
    }

    /// Writes the effective configuration to `<run_dir>/config.json`.
    pub fn echo(&self) -> Result<PathBuf> {
        let dir = self.run_dir();
        fs::create_dir_all(&dir)?;
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_then_flags() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.json");
        fs::write(&path, r#"{"model": {"hidden": 32}, "train": {"steps": 7, "adam": {"lr": 0.01}}}"#).unwrap();
        let cfg: RunConfig = resolve(Some(&path), &[("train.steps", json!(9))]).unwrap();
        assert_eq!(cfg.model.hidden, 32);
        assert_eq!(cfg.train.steps, 9);
        assert_eq!(cfg.train.adam.lr, 0.01);
        assert_eq!(cfg.train.adam.beta1, 0.9);
        assert_eq!(cfg.model.blocks, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.json");
        fs::write(&path, r#"{"model": {"hiden": 32}}"#).unwrap();
        assert!(matches!(resolve::<RunConfig>(Some(&path), &[]), Err(Error::InvalidArgument(_))));
        fs::write(&path, r#"{"colour": 1}"#).unwrap();
        assert!(resolve::<RunConfig>(Some(&path), &[]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig { run_root: tmp.path().to_path_buf(), name: "x".into(), ..Default::default() }.with_seed(5);
        let path = cfg.echo().unwrap();
        let back: RunConfig = resolve(Some(&path), &[]).unwrap();
        assert_eq!(back, cfg);
        assert!(back.validate().is_ok());
    }
}
