//! Layered configuration: defaults, then a JSON file, then `--set` overrides,
//! then explicit flags.

use std::fs;
use std::path::Path;

use coughscreen::harness::TrainConfig;
use coughscreen::models::ModelConfig;
use coughscreen::preprocess::PreprocessConfig;
use coughscreen::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Master seed; a random one is drawn and printed when absent.
    pub seed: Option<u64>,
    /// Worker threads for preprocessing and prediction; 0 uses every core.
    pub workers: usize,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

/// Sets `a.b.c = value` inside a JSON object, creating objects on the way.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Validation(format!("malformed override key {key:?}")));
        }
        let obj = match node {
            Value::Object(map) => map,
            _ => return Err(CliError::Validation(format!("override {key:?}: {} is not a section", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Validation(format!("config {} must hold a JSON object", path.display())));
    }
    Ok(value)
}

/// Recursively overlays `top` onto `base`; objects merge, anything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
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

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_override(spec: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override {spec:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.trim().to_string(), value))
}

impl AppConfig {
    /// Reads an optional config file and applies overrides. Unknown keys are rejected.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        Self::load_layered(&[], file, overrides)
    }

    /// Like [`AppConfig::load`], with earlier layers (such as a run's echoed
    /// config) underneath the file.
    pub fn load_layered(base: &[&Path], file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = Value::Object(Map::new());
        for path in base.iter().copied().chain(file) {
            merge(&mut root, read_json(path)?);
        }
        for spec in overrides {
            let (key, value) = parse_override(spec)?;
            set_path(&mut root, &key, value)?;
        }
        serde_json::from_value(root).map_err(|e| CliError::Validation(format!("configuration: {e}")))
    }

    /// Fixes the seed (drawing one if needed) and copies it to every stage.
    pub fn resolve_seed(&mut self) -> u64 {
        let seed = *self.seed.get_or_insert_with(|| {
            let s = rand::random::<u64>() >> 11;
            eprintln!("no seed given; using seed {s}");
            s
        });
        self.train.seed = seed;
        self.synth.seed = seed;
        seed
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: Result<(), String>| r.map_err(CliError::Validation);
        v(self.preprocess.validate().map_err(|e| e.to_string()))?;
        v(self.model.validate().map_err(|e| e.to_string()))?;
        v(self.train.validate().map_err(|e| e.to_string()))?;
        v(self.synth.validate().map_err(|e| e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(EFFECTIVE_CONFIG);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    /// Reads a previously written `effective_config.json`, if there is one.
    pub fn read_effective(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(EFFECTIVE_CONFIG);
        if !path.exists() {
            return Ok(None);
        }
        Self::load(Some(&path), &[]).map(Some)
    }
}
