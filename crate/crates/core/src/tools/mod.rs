//! Schema-described tools: descriptors, argument validation, the registry
//! that dispatches calls, and OpenAPI export.

mod openapi;
mod registry;
mod schema;

use std::fmt;
use std::future::Future;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

pub use openapi::{canonical_json, export_openapi, ServiceMeta};
pub use registry::{AuditAction, AuditRecord, RegistryError, ToolRegistry, DEFAULT_TOOL_DEADLINE};
pub use schema::{check_input_schema, is_valid_tool_name, validate_args, SchemaViolation};

/// Where a tool's handler lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Local,
    Remote { service_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub input_schema: Value,
    #[serde(default)]
    pub origin: Origin,
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, description: impl Into<String>, input_schema: Value) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            input_schema,
            origin: Origin::Local,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool: String,
    pub args: Value,
}

/// Failure category carried by an error observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    UnknownTool,
    SchemaViolation,
    HandlerError,
    Timeout,
    ExtensionGone,
    /// Tool-specific kinds such as `OutOfRange`.
    Other(String),
}

impl ErrorKind {
    pub fn as_str(&self) -> &str {
        match self {
            Self::UnknownTool => "UnknownTool",
            Self::SchemaViolation => "SchemaViolation",
            Self::HandlerError => "HandlerError",
            Self::Timeout => "Timeout",
            Self::ExtensionGone => "ExtensionGone",
            Self::Other(s) => s,
        }
    }
}

impl From<&str> for ErrorKind {
    fn from(s: &str) -> Self {
        match s {
            "UnknownTool" => Self::UnknownTool,
            "SchemaViolation" => Self::SchemaViolation,
            "HandlerError" => Self::HandlerError,
            "Timeout" => Self::Timeout,
            "ExtensionGone" => Self::ExtensionGone,
            other => Self::Other(other.to_string()),
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ErrorKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ErrorKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Self::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct ToolError {
    pub kind: ErrorKind,
    pub message: String,
    /// JSON pointer of the offending argument, for schema violations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl ToolError {
    pub fn new(kind: impl Into<ErrorKind>, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            path: None,
        }
    }

    pub fn handler(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::HandlerError, message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { value: Value },
    Error { error: ToolError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub call_id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl Observation {
    pub fn ok(call_id: impl Into<String>, value: Value) -> Self {
        Self {
            call_id: call_id.into(),
            outcome: Outcome::Ok { value },
        }
    }

    pub fn error(call_id: impl Into<String>, error: ToolError) -> Self {
        Self {
            call_id: call_id.into(),
            outcome: Outcome::Error { error },
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, Outcome::Ok { .. })
    }

    pub fn error_kind(&self) -> Option<&ErrorKind> {
        match &self.outcome {
            Outcome::Error { error } => Some(&error.kind),
            Outcome::Ok { .. } => None,
        }
    }
}

/// Executes a tool call. Local tools implement this directly; remote tools
/// are backed by a handler that forwards over the extension connection.
#[async_trait]
pub trait ToolHandler: Send + Sync + 'static {
    async fn call(&self, args: Value) -> Result<Value, ToolError>;
}

struct FnHandler<F>(F);

#[async_trait]
impl<F, Fut> ToolHandler for FnHandler<F>
where
    F: Fn(Value) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = Result<Value, ToolError>> + Send + 'static,
{
    async fn call(&self, args: Value) -> Result<Value, ToolError> {
        (self.0)(args).await
    }
}

/// Wraps an async closure as a handler.
pub fn handler_fn<F, Fut>(f: F) -> Arc<dyn ToolHandler>
where
    F: Fn(Value) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = Result<Value, ToolError>> + Send + 'static,
{
    Arc::new(FnHandler(f))
}
