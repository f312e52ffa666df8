//! Assistant definitions for `serve --assistant FILE`.
//!
//! The file is JSON in one of three shapes:
//!
//! * a list of action payloads: one scripted assistant named `default`;
//! * an object with assistant settings (`name`, `instructions`,
//!   `tool_names`, `max_iterations`, ...) and an optional `script` list;
//!   without a script the assistant uses the chat-completions provider
//!   configured through `AGENTKIT_LLM_*`;
//! * `{"assistants": [...]}` holding several such objects.
//!
//! In scripted payloads the string `{{user_message}}` is replaced with the
//! text of the latest user message, so a fixed script can still pass the
//! user's question on to a tool.

use std::path::Path;
use std::sync::Arc;

use agentkit_core::agent::{
    AssistantConfig, LlmProvider, OpenAiConfig, OpenAiProvider, PromptBundle, ProviderError, Role, ScriptedProvider,
};
use agentkit_gateway::AssistantProfile;
use async_trait::async_trait;
use serde_json::Value;

use crate::CliError;

pub const USER_MESSAGE_PLACEHOLDER: &str = "{{user_message}}";

/// Substitutes the placeholder in every string of the inner provider's
/// payload.
pub struct Templated<P> {
    inner: P,
}

impl<P> Templated<P> {
    pub fn new(inner: P) -> Self {
        Self { inner }
    }
}

fn substitute(v: &mut Value, text: &str) {
    match v {
        Value::String(s) if s.contains(USER_MESSAGE_PLACEHOLDER) => *s = s.replace(USER_MESSAGE_PLACEHOLDER, text),
        Value::Array(items) => items.iter_mut().for_each(|i| substitute(i, text)),
        Value::Object(map) => map.values_mut().for_each(|i| substitute(i, text)),
        _ => {}
    }
}

#[async_trait]
impl<P: LlmProvider> LlmProvider for Templated<P> {
    async fn complete(&self, bundle: &PromptBundle) -> Result<Value, ProviderError> {
        let mut payload = self.inner.complete(bundle).await?;
        let last_user = bundle
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User && m.call_id.is_none())
            .map(|m| m.content.as_str())
            .unwrap_or("");
        substitute(&mut payload, last_user);
        Ok(payload)
    }
}

fn llm_factory() -> agentkit_gateway::ProviderFactory {
    let config = OpenAiConfig::from_env();
    Arc::new(move || -> Arc<dyn LlmProvider> {
        match OpenAiProvider::new(config.clone()) {
            Ok(p) => Arc::new(p),
            Err(e) => Arc::new(ScriptedProvider::new([agentkit_core::agent::ScriptStep::Fail(e.to_string())])),
        }
    })
}

fn scripted_factory(script: Vec<Value>) -> agentkit_gateway::ProviderFactory {
    Arc::new(move || -> Arc<dyn LlmProvider> { Arc::new(Templated::new(ScriptedProvider::new(script.clone()))) })
}

fn one(value: &Value, fallback_name: &str) -> Result<(String, AssistantProfile), String> {
    match value {
        Value::Array(script) => {
            let config = AssistantConfig {
                name: fallback_name.to_string(),
                ..AssistantConfig::default()
            };
            Ok((config.name.clone(), AssistantProfile::new(config, scripted_factory(script.clone()))))
        }
        Value::Object(map) => {
            let mut settings = map.clone();
            let script = settings.remove("script");
            let mut config: AssistantConfig =
                serde_json::from_value(Value::Object(settings)).map_err(|e| e.to_string())?;
            if !map.contains_key("name") {
                config.name = fallback_name.to_string();
            }
            if config.max_iterations == 0 {
                return Err("max_iterations must be at least 1".into());
            }
            let provider = match script {
                None => llm_factory(),
                Some(Value::Array(steps)) => scripted_factory(steps),
                Some(_) => return Err("`script` must be a list of action payloads".into()),
            };
            Ok((config.name.clone(), AssistantProfile::new(config, provider)))
        }
        _ => Err("expected a list of actions or an assistant object".into()),
    }
}

pub fn parse_assistants(value: &Value) -> Result<Vec<(String, AssistantProfile)>, String> {
    let list = match value.get("assistants") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| one(v, &format!("assistant-{i}")).map_err(|e| format!("assistants[{i}]: {e}")))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err("`assistants` must be a list".into()),
        None => vec![one(value, "default")?],
    };
    let mut seen = std::collections::HashSet::new();
    for (name, _) in &list {
        if !seen.insert(name.clone()) {
            return Err(format!("duplicate assistant name `{name}`"));
        }
    }
    if list.is_empty() {
        return Err("no assistants defined".into());
    }
    Ok(list)
}

pub fn load_assistants(path: Option<&Path>) -> Result<Vec<(String, AssistantProfile)>, CliError> {
    let Some(path) = path else {
        let config = AssistantConfig {
            name: "default".into(),
            ..AssistantConfig::default()
        };
        return Ok(vec![("default".into(), AssistantProfile::new(config, llm_factory()))]);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Failed(format!("cannot read assistant file {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Failed(format!("assistant file {} is not JSON: {e}", path.display())))?;
    parse_assistants(&value).map_err(|e| CliError::Failed(format!("assistant file {}: {e}", path.display())))
}
