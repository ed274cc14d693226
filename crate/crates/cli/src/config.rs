//! `--config` file handling. Values are merged as JSON so that flags, spec
//! files and the config file can each override individual keys.

use std::path::{Path, PathBuf};

use dsct::dataset::SpectraSource;
use dsct::geometry::GeometrySpec;
use dsct::opmt::OpmtConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Settings shared by every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub spectra: SpectraSource,
    pub i0: f64,
    pub seed: u64,
    pub opmt: OpmtConfig,
    pub matrix_cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometrySpec::default(),
            spectra: SpectraSource::default(),
            i0: dsct::forward::DEFAULT_I0,
            seed: 0,
            opmt: OpmtConfig::default(),
            matrix_cache: None,
        }
    }
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
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

/// Builds a JSON object from `(dotted.key, value)` pairs, skipping `None`s.
pub fn overrides(pairs: Vec<(&str, Option<Value>)>) -> Value {
    let mut root = Value::Object(Map::new());
    for (key, value) in pairs {
        let Some(value) = value else { continue };
        let mut node = value;
        for part in key.rsplit('.') {
            let mut m = Map::new();
            m.insert(part.to_string(), node);
            node = Value::Object(m);
        }
        merge(&mut root, node);
    }
    root
}

pub fn to_value<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|v| serde_json::to_value(v).expect("plain values serialize"))
}

pub fn decode<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}
