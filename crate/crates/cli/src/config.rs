//! Settings layering: defaults, then a config file, then command-line flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::UsageError;

/// Keys whose key=value form is always a list, even with a single element.
const LIST_KEYS: [&str; 5] = ["grid", "models", "horizons", "init", "core_window"];

fn scalar(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), UsageError> {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(UsageError(format!("malformed config key `{key}`")));
        }
        if parts.peek().is_none() {
            node.insert(part.to_string(), value);
            return Ok(());
        }
        let slot = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        node = match slot {
            Value::Object(m) => m,
            _ => return Err(UsageError(format!("config key `{key}` nests under a scalar"))),
        };
    }
    Ok(())
}

/// Parse `key=value` lines (`#` comments, dotted keys for nested sections)
/// or a JSON object.
pub fn parse_config_text(text: &str) -> Result<Map<String, Value>, UsageError> {
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(text) {
            Ok(Value::Object(m)) => Ok(m),
            Ok(_) => Err(UsageError("JSON config must be an object".into())),
            Err(e) => Err(UsageError(format!("config is not valid JSON: {e}"))),
        };
    }
    let mut root = Map::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", k + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let leaf = key.rsplit('.').next().unwrap_or(key);
        let v = if LIST_KEYS.contains(&leaf) {
            Value::Array(value.split(',').map(|s| scalar(s.trim())).collect())
        } else {
            scalar(value)
        };
        insert_dotted(&mut root, key, v)?;
    }
    Ok(root)
}

pub fn read_config(path: &Path) -> Result<Map<String, Value>, UsageError> {
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

/// Merge `overlay` into `base`, recursing into nested objects.
fn merge(base: &mut Map<String, Value>, overlay: Map<String, Value>) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `base`, overridden by the config file, overridden by `flags`.
/// Unknown keys and ill-typed values are usage errors.
pub fn layered<T>(base: &T, config: Option<&Path>, flags: Map<String, Value>) -> Result<T, UsageError>
where
    T: DeserializeOwned + serde::Serialize,
{
    let mut merged = match serde_json::to_value(base) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    if let Some(path) = config {
        merge(&mut merged, read_config(path)?);
    }
    merge(&mut merged, flags);
    serde_json::from_value(Value::Object(merged)).map_err(|e| UsageError(format!("invalid settings: {e}")))
}

/// Collect `Some` flag values under their settings key.
#[derive(Default)]
pub struct Flags(pub Map<String, Value>);

impl Flags {
    pub fn set<V: serde::Serialize>(&mut self, key: &str, value: Option<V>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            insert_dotted(&mut self.0, key, v).expect("flag keys are well formed");
        }
        self
    }
}
