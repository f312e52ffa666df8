#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use agentkit_core::agent::{AssistantConfig, LlmProvider, ScriptedProvider};
use agentkit_core::tools::ToolRegistry;
use agentkit_gateway::{AssistantProfile, Gateway, GatewayConfig};
use serde_json::Value;

pub struct Running {
    pub gateway: Arc<Gateway>,
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
    }
}

pub async fn start(registry: Arc<ToolRegistry>, assistants: Vec<(String, AssistantProfile)>, config: GatewayConfig) -> Running {
    let gateway = Gateway::new(registry, assistants, config);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(gateway.clone().serve(listener, async move {
        let _ = rx.await;
    }));
    Running {
        gateway,
        base,
        stop: Some(tx),
    }
}

/// An assistant whose every session replays `script` from the start.
pub fn scripted(script: Vec<Value>, config: AssistantConfig) -> AssistantProfile {
    AssistantProfile::new(
        config,
        Arc::new(move || -> Arc<dyn LlmProvider> { Arc::new(ScriptedProvider::new(script.clone())) }),
    )
}

pub fn openapi_paths(doc: &Value) -> BTreeSet<String> {
    doc["paths"]
        .as_object()
        .map(|p| p.keys().cloned().collect())
        .unwrap_or_default()
}

pub fn registry_paths(reg: &ToolRegistry) -> BTreeSet<String> {
    reg.list().into_iter().map(|d| format!("/tools/{}", d.name)).collect()
}
