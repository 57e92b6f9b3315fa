//! Flat `key=value` configuration files.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Keys name fields of the target struct, including fields of
//! nested sections (`lambda1` sets `alignment.lambda1`). Values are numbers,
//! `true`/`false`, `none` for an unset option, or bare strings.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// `(line number, key, value)` triples in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key=value, got `{line}`") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn literal(v: &str) -> Value {
    if v.eq_ignore_ascii_case("none") {
        return Value::Null;
    }
    match serde_json::from_str::<Value>(v) {
        Ok(x @ (Value::Number(_) | Value::Bool(_) | Value::Null)) => x,
        _ => Value::String(v.to_string()),
    }
}

fn set(obj: &mut Map<String, Value>, key: &str, value: &Value) -> bool {
    if let Some(slot) = obj.get_mut(key) {
        *slot = value.clone();
        return true;
    }
    obj.values_mut().any(|child| match child {
        Value::Object(m) => set(m, key, value),
        _ => false,
    })
}

/// Applies `pairs` on top of `base`. Unknown keys and ill-typed values are
/// configuration errors.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, pairs: &[(String, String)]) -> Result<T> {
    let mut value = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    let Value::Object(obj) = &mut value else {
        return Err(Error::Config("configuration must be a struct".into()));
    };
    for (k, v) in pairs {
        if !set(obj, k, &literal(v)) {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

/// Reads `path` and applies it on top of `T::default()`.
pub fn load<T: Serialize + DeserializeOwned + Default>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let pairs: Vec<(String, String)> = parse_kv(&text)?.into_iter().map(|(_, k, v)| (k, v)).collect();
    apply(&T::default(), &pairs)
}

fn flatten(prefix_free: &Map<String, Value>, out: &mut String) {
    for (k, v) in prefix_free {
        match v {
            Value::Object(m) => flatten(m, out),
            Value::Null => out.push_str(&format!("{k}=none\n")),
            Value::String(s) => out.push_str(&format!("{k}={s}\n")),
            other => out.push_str(&format!("{k}={other}\n")),
        }
    }
}

/// Every field as a `key=value` line, nested sections flattened.
pub fn to_kv<T: Serialize>(v: &T) -> String {
    let mut out = String::new();
    if let Ok(Value::Object(m)) = serde_json::to_value(v) {
        flatten(&m, &mut out);
    }
    out
}
