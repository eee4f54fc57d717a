//! Settings resolution (defaults < config file < flags) and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

/// Flag values that were given on the command line, keyed like the
/// settings struct.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            self.0.insert(key.to_string(), v);
        }
        self
    }

    pub fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.0.insert(key.to_string(), Value::Bool(true));
        }
        self
    }
}

/// Reads a config file. A run manifest is accepted too, in which case its
/// recorded settings are used.
fn read_config(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Usage)?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(Failure::Usage)?;
    let Value::Object(mut obj) = value else {
        return Err(Failure::usage(format!("{}: config must be a JSON object", path.display())));
    };
    if obj.contains_key("subcommand") {
        if let Some(Value::Object(cfg)) = obj.remove("config") {
            return Ok(cfg);
        }
    }
    Ok(obj)
}

pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: T,
    config: Option<&Path>,
    overrides: Overrides,
) -> Result<T, Failure> {
    let Value::Object(mut merged) = serde_json::to_value(defaults).expect("settings serialize")
    else {
        unreachable!("settings are structs");
    };
    let mut layer = |extra: Map<String, Value>, source: &str| -> Result<(), Failure> {
        for (k, v) in extra {
            if !merged.contains_key(&k) {
                return Err(Failure::usage(format!("{source}: unknown setting {k:?}")));
            }
            merged.insert(k, v);
        }
        Ok(())
    };
    if let Some(path) = config {
        layer(read_config(path)?, &path.display().to_string())?;
    }
    layer(overrides.0, "command line")?;
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Failure::usage(format!("invalid setting: {e}")))
}

/// Seed from the settings, or a fresh one from the clock.
pub fn fill_seed(seed: &mut Option<u64>) -> u64 {
    *seed.get_or_insert_with(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    })
}

pub fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    path.clone()
        .ok_or_else(|| Failure::usage(format!("missing required --{flag}")))
}

#[derive(Serialize)]
pub struct Manifest<'a, S: Serialize> {
    pub subcommand: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub config: &'a S,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub threads: usize,
    pub wall_time_seconds: f64,
}

/// Manifest path: explicit, or next to the first output.
pub fn manifest_path(explicit: Option<&Path>, outputs: &[PathBuf]) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        outputs.first().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Data)
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json output serializes");
    text.push('\n');
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
