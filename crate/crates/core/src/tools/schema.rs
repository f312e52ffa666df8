//! Validation for the JSON Schema subset tools may declare.
//!
//! Supported keywords: `type` (string, number, integer, boolean, array,
//! object), `properties`, `required`, `items`, `enum`, `description` and
//! `default`. Other keywords are accepted in schemas but not enforced.
//! Objects that declare `properties` are strict: unlisted members are
//! rejected. An object schema without `properties` accepts any members.

use serde_json::{Map, Value};
use thiserror::Error;

const TYPES: &[&str] = &["string", "number", "integer", "boolean", "array", "object"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema violation at {path}: {message}")]
pub struct SchemaViolation {
    /// JSON pointer of the first failing location (`""` for the root).
    pub path: String,
    pub message: String,
}

pub fn is_valid_tool_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn escape_pointer(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

/// Checks that a tool input schema is an object schema using the subset's
/// keywords correctly.
pub fn check_input_schema(schema: &Value) -> Result<(), String> {
    let Some(obj) = schema.as_object() else {
        return Err("input schema must be a JSON object".into());
    };
    if obj.get("type").and_then(Value::as_str) != Some("object") {
        return Err("input schema root must have type \"object\"".into());
    }
    check_node(schema, "")
}

fn check_node(schema: &Value, path: &str) -> Result<(), String> {
    let Some(obj) = schema.as_object() else {
        return Err(format!("{path}: schema must be an object"));
    };
    if let Some(t) = obj.get("type") {
        match t.as_str() {
            Some(t) if TYPES.contains(&t) => {}
            _ => return Err(format!("{path}: unsupported type {t}")),
        }
    }
    if let Some(props) = obj.get("properties") {
        let Some(props) = props.as_object() else {
            return Err(format!("{path}: `properties` must be an object"));
        };
        for (name, sub) in props {
            check_node(sub, &format!("{path}/properties/{}", escape_pointer(name)))?;
        }
    }
    if let Some(req) = obj.get("required") {
        let ok = req.as_array().is_some_and(|a| a.iter().all(Value::is_string));
        if !ok {
            return Err(format!("{path}: `required` must be a list of strings"));
        }
    }
    if let Some(e) = obj.get("enum") {
        if !e.is_array() {
            return Err(format!("{path}: `enum` must be a list"));
        }
    }
    if let Some(items) = obj.get("items") {
        check_node(items, &format!("{path}/items"))?;
    }
    Ok(())
}

fn type_matches(expected: &str, value: &Value) -> bool {
    match expected {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => match value {
            Value::Number(n) => {
                n.is_i64() || n.is_u64() || n.as_f64().is_some_and(|f| f.is_finite() && f.fract() == 0.0)
            }
            _ => false,
        },
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        _ => false,
    }
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_f64() => "number",
        Value::Number(_) => "integer",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Structural equality where numbers compare by value, so `2.0` equals `2`.
fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_i64(), y.as_i64()) {
            (Some(x), Some(y)) => x == y,
            _ => x.as_f64() == y.as_f64(),
        },
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| json_eq(a, b)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_eq(v, w)))
        }
        _ => a == b,
    }
}

fn violation(path: &str, message: impl Into<String>) -> SchemaViolation {
    SchemaViolation {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Validates `args` against `schema`, returning a copy with declared
/// `default`s filled in for absent optional properties.
pub fn validate_args(schema: &Value, args: &Value) -> Result<Value, SchemaViolation> {
    validate_node(schema, args, "")
}

fn validate_node(schema: &Value, value: &Value, path: &str) -> Result<Value, SchemaViolation> {
    let Some(schema) = schema.as_object() else {
        return Ok(value.clone());
    };
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        if !type_matches(t, value) {
            return Err(violation(path, format!("expected {t}, got {}", type_name(value))));
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.iter().any(|o| json_eq(o, value)) {
            return Err(violation(path, format!("value must be one of {}", Value::Array(options.clone()))));
        }
    }
    match value {
        Value::Object(map) if schema.contains_key("properties") => validate_object(schema, map, path),
        Value::Array(items) => match schema.get("items") {
            Some(item_schema) => items
                .iter()
                .enumerate()
                .map(|(i, item)| validate_node(item_schema, item, &format!("{path}/{i}")))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array),
            None => Ok(value.clone()),
        },
        _ => Ok(value.clone()),
    }
}

fn validate_object(schema: &Map<String, Value>, map: &Map<String, Value>, path: &str) -> Result<Value, SchemaViolation> {
    let empty = Map::new();
    let props = schema.get("properties").and_then(Value::as_object).unwrap_or(&empty);
    if let Some(required) = schema.get("required").and_then(Value::as_array) {
        for name in required.iter().filter_map(Value::as_str) {
            if !map.contains_key(name) {
                return Err(violation(
                    &format!("{path}/{}", escape_pointer(name)),
                    format!("missing required property `{name}`"),
                ));
            }
        }
    }
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    let mut out = Map::new();
    for key in keys {
        let child = format!("{path}/{}", escape_pointer(key));
        let Some(sub) = props.get(key) else {
            return Err(violation(&child, format!("unknown property `{key}`")));
        };
        out.insert(key.clone(), validate_node(sub, &map[key], &child)?);
    }
    for (name, sub) in props {
        if !out.contains_key(name) {
            if let Some(default) = sub.get("default") {
                out.insert(name.clone(), default.clone());
            }
        }
    }
    Ok(Value::Object(out))
}
