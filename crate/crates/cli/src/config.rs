//! Layering of defaults, a config file and `key=value` flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

/// Read a flat TOML or JSON table of overrides.
pub fn read_table(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(Failure::Usage(format!("{}: expected a table of settings", path.display()))),
    }
}

/// Parse `key=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), Failure> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("expected key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Apply `overrides` in order to `base`, rejecting keys `T` does not have.
pub fn overlay<T: Serialize + DeserializeOwned>(
    base: &T,
    overrides: impl IntoIterator<Item = (String, Value)>,
) -> Result<T, Failure> {
    let mut doc = serde_json::to_value(base).expect("config serializes");
    let map = doc.as_object_mut().expect("config is a table");
    for (k, v) in overrides {
        match map.get_mut(&k) {
            Some(slot) => *slot = v,
            None => return Err(Failure::Usage(format!("unknown config key {k:?}"))),
        }
    }
    serde_json::from_value(doc).map_err(|e| Failure::Usage(format!("bad config value: {e}")))
}
