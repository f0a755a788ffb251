//! Canonical JSON encoding for tool-call arguments.
//!
//! Two argument documents are "the same call" exactly when their canonical
//! encodings are byte-equal: object keys sorted, no insignificant whitespace,
//! numbers and strings as serde_json prints them. `"5"` and `5` stay distinct.

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Parses `raw` and returns its canonical encoding.
///
/// The top-level value must be an object (or `null`, treated as `{}`).
pub fn canonicalize_arguments(raw: &str) -> Result<String> {
    let value: Value = serde_json::from_str(raw).map_err(|e| parse_error(raw, &e))?;
    match value {
        Value::Null => Ok("{}".to_owned()),
        Value::Object(_) => Ok(canonical_string(&value)),
        other => Err(Error::Validation(format!(
            "arguments must be an object, got {}",
            json_kind(&other)
        ))),
    }
}

/// Recursively rebuilds `value` with every object's keys inserted in sorted order.
pub fn sort_keys(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::with_capacity(map.len());
            for k in keys {
                out.insert(k.clone(), sort_keys(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

/// Compact encoding of `value` with sorted keys.
pub fn canonical_string(value: &Value) -> String {
    serde_json::to_string(&sort_keys(value)).expect("serializing a Value cannot fail")
}

/// Converts a serde_json line/column position into a byte offset into `raw`.
pub(crate) fn parse_error(raw: &str, err: &serde_json::Error) -> Error {
    let line = err.line().max(1);
    let column = err.column();
    let mut offset = 0usize;
    for (idx, l) in raw.split_inclusive('\n').enumerate() {
        if idx + 1 == line {
            offset += column.saturating_sub(1).min(l.len());
            break;
        }
        offset += l.len();
    }
    Error::Parse {
        offset: offset.min(raw.len()),
        message: err.to_string(),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
