use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::schema::{check_input_schema, is_valid_tool_name, validate_args};
use super::{ErrorKind, Observation, Origin, ToolCall, ToolDescriptor, ToolError, ToolHandler};

pub const DEFAULT_TOOL_DEADLINE: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("invalid tool name `{0}`")]
    InvalidName(String),
    #[error("invalid input schema for `{name}`: {reason}")]
    InvalidSchema { name: String, reason: String },
    #[error("tool names already registered: {}", .0.join(", "))]
    NameCollision(Vec<String>),
    #[error("duplicate tool name `{0}` in batch")]
    DuplicateInBatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditAction {
    Registered,
    Replaced,
    Deregistered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub at: DateTime<Utc>,
    pub tool: String,
    pub origin: Origin,
    pub action: AuditAction,
}

#[derive(Clone)]
struct Entry {
    descriptor: ToolDescriptor,
    handler: Arc<dyn ToolHandler>,
}

/// Name-keyed table of tools. Cheap to share behind an `Arc`; registration
/// and lookup may happen from any task.
#[derive(Default)]
pub struct ToolRegistry {
    tools: RwLock<BTreeMap<String, Entry>>,
    audit: Mutex<Vec<AuditRecord>>,
}

fn check_descriptor(d: &ToolDescriptor) -> Result<(), RegistryError> {
    if !is_valid_tool_name(&d.name) {
        return Err(RegistryError::InvalidName(d.name.clone()));
    }
    check_input_schema(&d.input_schema).map_err(|reason| RegistryError::InvalidSchema {
        name: d.name.clone(),
        reason,
    })
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, tool: &str, origin: &Origin, action: AuditAction) {
        tracing::info!(tool, ?origin, ?action, "tool registry change");
        self.audit.lock().unwrap().push(AuditRecord {
            at: Utc::now(),
            tool: tool.to_string(),
            origin: origin.clone(),
            action,
        });
    }

    /// Registers a tool, replacing any previous tool of the same name.
    pub fn register(&self, descriptor: ToolDescriptor, handler: Arc<dyn ToolHandler>) -> Result<(), RegistryError> {
        check_descriptor(&descriptor)?;
        let name = descriptor.name.clone();
        let origin = descriptor.origin.clone();
        let previous = self
            .tools
            .write()
            .unwrap()
            .insert(name.clone(), Entry { descriptor, handler });
        let action = if previous.is_some() {
            AuditAction::Replaced
        } else {
            AuditAction::Registered
        };
        self.record(&name, &origin, action);
        Ok(())
    }

    /// Registers all tools or none. Fails if any name is already taken.
    pub fn register_batch_exclusive(
        &self,
        batch: Vec<(ToolDescriptor, Arc<dyn ToolHandler>)>,
    ) -> Result<Vec<String>, RegistryError> {
        let mut seen = std::collections::BTreeSet::new();
        for (d, _) in &batch {
            check_descriptor(d)?;
            if !seen.insert(d.name.clone()) {
                return Err(RegistryError::DuplicateInBatch(d.name.clone()));
            }
        }
        let mut tools = self.tools.write().unwrap();
        let taken: Vec<String> = batch
            .iter()
            .filter(|(d, _)| tools.contains_key(&d.name))
            .map(|(d, _)| d.name.clone())
            .collect();
        if !taken.is_empty() {
            return Err(RegistryError::NameCollision(taken));
        }
        let mut added = Vec::with_capacity(batch.len());
        for (descriptor, handler) in batch {
            added.push((descriptor.name.clone(), descriptor.origin.clone()));
            tools.insert(descriptor.name.clone(), Entry { descriptor, handler });
        }
        drop(tools);
        for (name, origin) in &added {
            self.record(name, origin, AuditAction::Registered);
        }
        Ok(added.into_iter().map(|(n, _)| n).collect())
    }

    pub fn deregister(&self, name: &str) -> bool {
        let removed = self.tools.write().unwrap().remove(name);
        match removed {
            Some(e) => {
                self.record(name, &e.descriptor.origin, AuditAction::Deregistered);
                true
            }
            None => false,
        }
    }

    /// Removes every tool registered by a remote service.
    pub fn deregister_service(&self, service_id: &str) -> Vec<String> {
        let origin = Origin::Remote {
            service_id: service_id.to_string(),
        };
        let removed: Vec<String> = {
            let mut tools = self.tools.write().unwrap();
            let names: Vec<String> = tools
                .values()
                .filter(|e| e.descriptor.origin == origin)
                .map(|e| e.descriptor.name.clone())
                .collect();
            for n in &names {
                tools.remove(n);
            }
            names
        };
        for n in &removed {
            self.record(n, &origin, AuditAction::Deregistered);
        }
        removed
    }

    /// Descriptors sorted by name.
    pub fn list(&self) -> Vec<ToolDescriptor> {
        self.tools.read().unwrap().values().map(|e| e.descriptor.clone()).collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<ToolDescriptor> {
        self.tools.read().unwrap().get(name).map(|e| e.descriptor.clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.read().unwrap().contains_key(name)
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.audit.lock().unwrap().clone()
    }

    /// Validates and dispatches a call. Every failure, including handler
    /// panics and deadline expiry, comes back as an error observation.
    pub async fn invoke(&self, call: &ToolCall, deadline: Duration) -> Observation {
        let entry = self.tools.read().unwrap().get(&call.tool).cloned();
        let Some(entry) = entry else {
            return Observation::error(
                &call.call_id,
                ToolError::new(ErrorKind::UnknownTool, format!("no tool named `{}`", call.tool)),
            );
        };
        let args = match validate_args(&entry.descriptor.input_schema, &call.args) {
            Ok(args) => args,
            Err(v) => {
                return Observation::error(
                    &call.call_id,
                    ToolError {
                        kind: ErrorKind::SchemaViolation,
                        message: v.message,
                        path: Some(v.path),
                    },
                )
            }
        };
        let mut task = tokio::spawn(async move { entry.handler.call(args).await });
        let result = match tokio::time::timeout(deadline, &mut task).await {
            Ok(Ok(r)) => r,
            Ok(Err(join)) => Err(ToolError::handler(panic_message(join))),
            Err(_) => {
                task.abort();
                Err(ToolError::new(
                    ErrorKind::Timeout,
                    format!("`{}` did not finish within {:.1}s", call.tool, deadline.as_secs_f64()),
                ))
            }
        };
        match result {
            Ok(value) => Observation::ok(&call.call_id, value),
            Err(e) => Observation::error(&call.call_id, e),
        }
    }
}

fn panic_message(err: tokio::task::JoinError) -> String {
    if !err.is_panic() {
        return "handler task was cancelled".into();
    }
    let payload = err.into_panic();
    let text = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("handler panicked: {text}")
}
