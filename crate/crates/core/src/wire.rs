//! Framed JSON messages spoken between the gateway and remote extensions.
//!
//! Every frame is one JSON object with a `type` field. An extension opens the
//! connection with `register`; the gateway answers `registered` or `error`.
//! After that the gateway sends `invoke` frames and the extension answers each
//! with exactly one `result` (or `error`) carrying the same `call_id`. Either
//! side may send `ping`; the peer answers `pong` with the same nonce.

use serde_json::{json, Map, Value};

use crate::tools::{ErrorKind, ToolDescriptor, ToolError};

/// Error kinds used on the wire in addition to the tool error kinds.
pub mod kinds {
    pub const DUPLICATE_SERVICE_ID: &str = "DuplicateServiceId";
    pub const TOOL_NAME_COLLISION: &str = "ToolNameCollision";
    pub const MALFORMED_REGISTER: &str = "MalformedRegister";
    pub const NOT_REGISTERED: &str = "NotRegistered";
    pub const UNKNOWN_TYPE: &str = "UnknownType";
    pub const MALFORMED: &str = "Malformed";
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Register {
        service_id: String,
        tools: Vec<ToolDescriptor>,
    },
    Registered {
        service_id: String,
        tools: Vec<String>,
    },
    Invoke {
        call_id: String,
        tool: String,
        args: Value,
    },
    Result {
        call_id: String,
        result: Result<Value, ToolError>,
    },
    Error {
        call_id: Option<String>,
        kind: String,
        message: String,
    },
    Ping {
        nonce: Option<u64>,
    },
    Pong {
        nonce: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("frame is not valid JSON: {0}")]
    NotJson(String),
    #[error("frame is not a JSON object")]
    NotObject,
    #[error("frame has no string `type` field")]
    MissingType,
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("malformed `{ty}` message: {reason}")]
    Malformed { ty: String, reason: String },
}

impl DecodeError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnknownType(_) => kinds::UNKNOWN_TYPE,
            _ => kinds::MALFORMED,
        }
    }
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Register { .. } => "register",
            Self::Registered { .. } => "registered",
            Self::Invoke { .. } => "invoke",
            Self::Result { .. } => "result",
            Self::Error { .. } => "error",
            Self::Ping { .. } => "ping",
            Self::Pong { .. } => "pong",
        }
    }

    pub fn error(call_id: Option<String>, kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Error {
            call_id,
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut v = match self {
            Self::Register { service_id, tools } => json!({
                "service_id": service_id,
                "tools": tools.iter().map(|t| json!({
                    "name": t.name,
                    "description": t.description,
                    "input_schema": t.input_schema,
                })).collect::<Vec<_>>(),
            }),
            Self::Registered { service_id, tools } => json!({"service_id": service_id, "tools": tools}),
            Self::Invoke { call_id, tool, args } => json!({"call_id": call_id, "tool": tool, "args": args}),
            Self::Result { call_id, result } => match result {
                Ok(value) => json!({"call_id": call_id, "ok": true, "value": value}),
                Err(e) => json!({
                    "call_id": call_id,
                    "ok": false,
                    "error": {"kind": e.kind.as_str(), "message": e.message},
                }),
            },
            Self::Error { call_id, kind, message } => {
                let mut v = json!({"kind": kind, "message": message});
                if let Some(id) = call_id {
                    v["call_id"] = json!(id);
                }
                v
            }
            Self::Ping { nonce } | Self::Pong { nonce } => match nonce {
                Some(n) => json!({"nonce": n}),
                None => json!({}),
            },
        };
        v["type"] = json!(self.type_name());
        v
    }

    pub fn encode(&self) -> String {
        self.to_value().to_string()
    }

    pub fn decode(frame: &str) -> Result<Self, DecodeError> {
        let value: Value = serde_json::from_str(frame).map_err(|e| DecodeError::NotJson(e.to_string()))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self, DecodeError> {
        let obj = value.as_object().ok_or(DecodeError::NotObject)?;
        let ty = obj.get("type").and_then(Value::as_str).ok_or(DecodeError::MissingType)?;
        let f = Fields { ty, obj };
        Ok(match ty {
            "register" => {
                let service_id = f.string("service_id")?;
                if service_id.is_empty() {
                    return Err(f.bad("`service_id` is empty"));
                }
                let tools = f
                    .array("tools")?
                    .iter()
                    .enumerate()
                    .map(|(i, t)| descriptor(t).map_err(|r| f.bad(format!("tools[{i}]: {r}"))))
                    .collect::<Result<_, _>>()?;
                Self::Register { service_id, tools }
            }
            "registered" => {
                let service_id = f.string("service_id")?;
                let tools = f
                    .array("tools")?
                    .iter()
                    .map(|t| t.as_str().map(String::from).ok_or_else(|| f.bad("tool names must be strings")))
                    .collect::<Result<_, _>>()?;
                Self::Registered { service_id, tools }
            }
            "invoke" => {
                let args = obj.get("args").cloned().unwrap_or_else(|| json!({}));
                Self::Invoke {
                    call_id: f.string("call_id")?,
                    tool: f.string("tool")?,
                    args,
                }
            }
            "result" => {
                let call_id = f.string("call_id")?;
                let ok = obj
                    .get("ok")
                    .and_then(Value::as_bool)
                    .ok_or_else(|| f.bad("missing boolean `ok`"))?;
                let result = if ok {
                    Ok(obj.get("value").cloned().ok_or_else(|| f.bad("ok result without `value`"))?)
                } else {
                    let err = obj
                        .get("error")
                        .and_then(Value::as_object)
                        .ok_or_else(|| f.bad("failed result without `error` object"))?;
                    let sub = Fields { ty, obj: err };
                    Err(ToolError::new(
                        ErrorKind::from(sub.string("kind")?.as_str()),
                        sub.string("message")?,
                    ))
                };
                Self::Result { call_id, result }
            }
            "error" => Self::Error {
                call_id: f.opt_string("call_id")?,
                kind: f.string("kind")?,
                message: f.string("message")?,
            },
            "ping" => Self::Ping { nonce: f.nonce()? },
            "pong" => Self::Pong { nonce: f.nonce()? },
            other => return Err(DecodeError::UnknownType(other.to_string())),
        })
    }
}

/// Best-effort `call_id` of a frame that failed to decode, so the error
/// reply can still be correlated.
pub fn salvage_call_id(frame: &str) -> Option<String> {
    let value: Value = serde_json::from_str(frame).ok()?;
    value.get("call_id")?.as_str().map(String::from)
}

struct Fields<'a> {
    ty: &'a str,
    obj: &'a Map<String, Value>,
}

impl Fields<'_> {
    fn bad(&self, reason: impl Into<String>) -> DecodeError {
        DecodeError::Malformed {
            ty: self.ty.to_string(),
            reason: reason.into(),
        }
    }

    fn string(&self, key: &str) -> Result<String, DecodeError> {
        match self.obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.bad(format!("`{key}` must be a string"))),
            None => Err(self.bad(format!("missing `{key}`"))),
        }
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>, DecodeError> {
        match self.obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.bad(format!("`{key}` must be a string"))),
        }
    }

    fn array(&self, key: &str) -> Result<&Vec<Value>, DecodeError> {
        self.obj
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| self.bad(format!("missing array `{key}`")))
    }

    fn nonce(&self) -> Result<Option<u64>, DecodeError> {
        match self.obj.get("nonce") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| self.bad("`nonce` must be an unsigned integer")),
        }
    }
}

fn descriptor(v: &Value) -> Result<ToolDescriptor, String> {
    let obj = v.as_object().ok_or("descriptor is not an object")?;
    let name = obj.get("name").and_then(Value::as_str).ok_or("missing string `name`")?;
    let description = match obj.get("description") {
        None | Some(Value::Null) => "",
        Some(Value::String(s)) => s,
        Some(_) => return Err("`description` must be a string".into()),
    };
    let schema = obj.get("input_schema").ok_or("missing `input_schema`")?;
    Ok(ToolDescriptor::new(name, description, schema.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::ErrorKind;

    fn sample() -> Vec<WireMessage> {
        vec![
            WireMessage::Register {
                service_id: "microscope-sim".into(),
                tools: vec![ToolDescriptor::new(
                    "move_stage",
                    "Move",
                    json!({"type": "object", "properties": {"dx": {"type": "number"}}}),
                )],
            },
            WireMessage::Registered {
                service_id: "s".into(),
                tools: vec!["a".into(), "b".into()],
            },
            WireMessage::Invoke {
                call_id: "c1".into(),
                tool: "move_stage".into(),
                args: json!({"dx": 1.5}),
            },
            WireMessage::Result {
                call_id: "c1".into(),
                result: Ok(json!({"x": 0.1, "y": -2e-7})),
            },
            WireMessage::Result {
                call_id: "c2".into(),
                result: Err(ToolError::new("OutOfRange", "x beyond limit")),
            },
            WireMessage::error(Some("c3".into()), "UnknownTool", "no such tool"),
            WireMessage::error(None, kinds::UNKNOWN_TYPE, "bad"),
            WireMessage::Ping { nonce: Some(7) },
            WireMessage::Pong { nonce: None },
        ]
    }

    #[test]
    fn encode_decode_round_trip() {
        for m in sample() {
            let text = m.encode();
            assert_eq!(WireMessage::decode(&text).unwrap(), m, "{text}");
        }
    }

    #[test]
    fn result_layout() {
        let ok = WireMessage::Result {
            call_id: "c".into(),
            result: Ok(json!(1)),
        };
        assert_eq!(ok.to_value(), json!({"type": "result", "call_id": "c", "ok": true, "value": 1}));
        let err = WireMessage::decode(r#"{"type":"result","call_id":"c","ok":false,"error":{"kind":"Timeout","message":"m"}}"#)
            .unwrap();
        match err {
            WireMessage::Result { result: Err(e), .. } => assert_eq!(e.kind, ErrorKind::Timeout),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(WireMessage::decode("{"), Err(DecodeError::NotJson(_))));
        assert_eq!(WireMessage::decode("[]"), Err(DecodeError::NotObject));
        assert_eq!(WireMessage::decode(r#"{"type": 3}"#), Err(DecodeError::MissingType));
        let unknown = WireMessage::decode(r#"{"type": "subscribe", "call_id": "x"}"#).unwrap_err();
        assert_eq!(unknown, DecodeError::UnknownType("subscribe".into()));
        assert_eq!(unknown.kind(), kinds::UNKNOWN_TYPE);
        for bad in [
            r#"{"type":"register","service_id":"","tools":[]}"#,
            r#"{"type":"register","service_id":"s"}"#,
            r#"{"type":"register","service_id":"s","tools":[{"name":"a"}]}"#,
            r#"{"type":"invoke","tool":"a"}"#,
            r#"{"type":"result","call_id":"c","ok":true}"#,
            r#"{"type":"result","call_id":"c","ok":false,"error":"x"}"#,
            r#"{"type":"ping","nonce":-1}"#,
        ] {
            let e = WireMessage::decode(bad).unwrap_err();
            assert_eq!(e.kind(), kinds::MALFORMED, "{bad}");
        }
    }

    #[test]
    fn register_ignores_claimed_origin() {
        let m = WireMessage::decode(
            r#"{"type":"register","service_id":"s","tools":[{"name":"a","input_schema":{"type":"object"},"origin":{"kind":"local"}}]}"#,
        )
        .unwrap();
        let WireMessage::Register { tools, .. } = m else { panic!() };
        assert_eq!(tools[0].description, "");
        assert_eq!(tools[0].origin, crate::tools::Origin::Local);
    }

    #[test]
    fn salvages_call_id() {
        assert_eq!(salvage_call_id(r#"{"type":"zzz","call_id":"k9"}"#).as_deref(), Some("k9"));
        assert_eq!(salvage_call_id("nope"), None);
    }
}
