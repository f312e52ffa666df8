use serde_json::{json, Map, Value};

use super::ToolRegistry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceMeta {
    pub title: String,
    pub version: String,
    pub description: String,
}

impl Default for ServiceMeta {
    fn default() -> Self {
        Self {
            title: "agentkit tools".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            description: String::new(),
        }
    }
}

const ERROR_SCHEMA: &str = r#"{
  "type": "object",
  "properties": {
    "kind": {"type": "string"},
    "message": {"type": "string"},
    "path": {"type": "string"}
  },
  "required": ["kind", "message"]
}"#;

/// Describes every registered tool as a `POST /tools/{name}` operation.
pub fn export_openapi(registry: &ToolRegistry, meta: &ServiceMeta) -> Value {
    let error_schema: Value = serde_json::from_str(ERROR_SCHEMA).expect("static schema");
    let mut paths = Map::new();
    for tool in registry.list() {
        let op = json!({
            "operationId": tool.name,
            "summary": tool.description,
            "requestBody": {
                "required": true,
                "content": {"application/json": {"schema": tool.input_schema}}
            },
            "responses": {
                "200": {
                    "description": "Tool result",
                    "content": {"application/json": {"schema": {}}}
                },
                "400": {
                    "description": "Arguments did not match the input schema",
                    "content": {"application/json": {"schema": error_schema}}
                }
            }
        });
        paths.insert(format!("/tools/{}", tool.name), json!({ "post": op }));
    }
    json!({
        "openapi": "3.1.0",
        "info": {
            "title": meta.title,
            "version": meta.version,
            "description": meta.description,
        },
        "paths": paths,
    })
}

/// Serializes with object keys in lexicographic order at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}
