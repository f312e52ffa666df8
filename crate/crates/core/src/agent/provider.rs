use std::collections::{HashSet, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};
use thiserror::Error;

use super::{Action, PromptBundle, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("LLM provider unavailable: {0}")]
    Unavailable(String),
}

/// A chat model that answers a prompt bundle with an action payload (see
/// [`super::parse_action`] for the accepted shapes).
#[async_trait]
pub trait LlmProvider: Send + Sync {
    async fn complete(&self, bundle: &PromptBundle) -> Result<Value, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptStep {
    Payload(Value),
    Fail(String),
}

impl From<Action> for ScriptStep {
    fn from(a: Action) -> Self {
        Self::Payload(a.to_payload())
    }
}

#[derive(Debug)]
enum Script {
    Once(VecDeque<ScriptStep>),
    Repeat(ScriptStep),
}

/// Test double that replays a fixed sequence of responses and records every
/// request. Once the script is used up every call fails.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Mutex<Script>,
    requests: Mutex<Vec<PromptBundle>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(steps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ScriptStep>,
    {
        Self {
            script: Mutex::new(Script::Once(steps.into_iter().map(Into::into).collect())),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Answers every request with the same step.
    pub fn repeating(step: impl Into<ScriptStep>) -> Self {
        Self {
            script: Mutex::new(Script::Repeat(step.into())),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Accepts either a JSON list of payloads or `{"script": [...]}`.
    pub fn from_json(value: &Value) -> Option<Self> {
        let list = match value {
            Value::Array(items) => items,
            Value::Object(o) => o.get("script")?.as_array()?,
            _ => return None,
        };
        Some(Self::new(list.iter().cloned().map(ScriptStep::Payload)))
    }

    pub fn requests(&self) -> Vec<PromptBundle> {
        self.requests.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn remaining(&self) -> usize {
        match &*self.script.lock().unwrap() {
            Script::Once(q) => q.len(),
            Script::Repeat(_) => usize::MAX,
        }
    }
}

impl From<Value> for ScriptStep {
    fn from(v: Value) -> Self {
        Self::Payload(v)
    }
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    async fn complete(&self, bundle: &PromptBundle) -> Result<Value, ProviderError> {
        self.requests.lock().unwrap().push(bundle.clone());
        let step = match &mut *self.script.lock().unwrap() {
            Script::Once(q) => q.pop_front(),
            Script::Repeat(s) => Some(s.clone()),
        };
        match step {
            Some(ScriptStep::Payload(v)) => Ok(v),
            Some(ScriptStep::Fail(msg)) => Err(ProviderError::Unavailable(msg)),
            None => Err(ProviderError::Unavailable("script exhausted".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-4o-mini".into(),
            timeout: Duration::from_secs(120),
        }
    }
}

impl OpenAiConfig {
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("AGENTKIT_LLM_BASE_URL") {
            cfg.base_url = v;
        }
        if let Ok(v) = std::env::var("AGENTKIT_LLM_API_KEY") {
            cfg.api_key = Some(v);
        }
        if let Ok(v) = std::env::var("AGENTKIT_LLM_MODEL") {
            cfg.model = v;
        }
        cfg
    }
}

/// Chat-completions client using function calling for tools.
pub struct OpenAiProvider {
    config: OpenAiConfig,
    client: reqwest::Client,
}

impl OpenAiProvider {
    pub fn new(config: OpenAiConfig) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let mut messages = vec![json!({"role": "system", "content": bundle.system})];
        let mut issued = HashSet::new();
        for m in &bundle.messages {
            match (m.role, &m.call_id) {
                (Role::Assistant, Some(id)) => {
                    let call: Value = serde_json::from_str(&m.content).unwrap_or(Value::Null);
                    issued.insert(id.clone());
                    messages.push(json!({
                        "role": "assistant",
                        "content": null,
                        "tool_calls": [{
                            "id": id,
                            "type": "function",
                            "function": {
                                "name": call["tool"],
                                "arguments": call["args"].to_string(),
                            }
                        }]
                    }));
                }
                // The matching call may have been truncated away.
                (Role::Tool, Some(id)) if issued.contains(id) => {
                    messages.push(json!({"role": "tool", "tool_call_id": id, "content": m.content}));
                }
                (Role::Tool, _) => {
                    messages.push(json!({"role": "user", "content": format!("Tool result: {}", m.content)}));
                }
                (Role::User, _) => messages.push(json!({"role": "user", "content": m.content})),
                (Role::Assistant, None) => messages.push(json!({"role": "assistant", "content": m.content})),
            }
        }
        let mut body = json!({"model": self.config.model, "messages": messages});
        if !bundle.tools.is_empty() {
            let tools: Vec<Value> = bundle
                .tools
                .iter()
                .map(|t| {
                    json!({"type": "function", "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.input_schema,
                    }})
                })
                .collect();
            body["tools"] = Value::Array(tools);
        }
        body
    }
}

/// Converts a chat-completions response into an action payload.
pub(crate) fn payload_from_completion(resp: &Value) -> Result<Value, ProviderError> {
    let msg = &resp["choices"][0]["message"];
    if msg.is_null() {
        return Err(ProviderError::Unavailable("response has no choices".into()));
    }
    let content = msg["content"].as_str().map(str::to_string);
    match msg["tool_calls"].as_array() {
        Some(calls) if !calls.is_empty() => {
            let calls: Vec<Value> = calls
                .iter()
                .map(|c| {
                    let raw = c["function"]["arguments"].as_str().unwrap_or("{}");
                    // Unparseable arguments are passed through so the turn
                    // loop reports them as a parse failure.
                    let args = serde_json::from_str::<Value>(raw).unwrap_or(Value::String(raw.to_string()));
                    json!({"tool": c["function"]["name"], "args": args})
                })
                .collect();
            Ok(json!({"type": "tool_calls", "reasoning": content, "calls": calls}))
        }
        _ => Ok(json!({"type": "final", "text": content.unwrap_or_default()})),
    }
}

#[async_trait]
impl LlmProvider for OpenAiProvider {
    async fn complete(&self, bundle: &PromptBundle) -> Result<Value, ProviderError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&self.request_body(bundle));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(ProviderError::Unavailable(format!("HTTP {status}: {body}")));
        }
        let value: Value = resp
            .json()
            .await
            .map_err(|e| ProviderError::Unavailable(format!("bad response body: {e}")))?;
        payload_from_completion(&value)
    }
}
