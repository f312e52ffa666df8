//! The ReAct loop and the types it works with.

mod action;
mod context;
mod provider;
mod turn;

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tools::{canonical_json, Observation, Outcome, ToolCall, ToolRegistry, DEFAULT_TOOL_DEADLINE};

pub use action::{parse_action, Action, ParseFailure, PlannedCall};
pub use context::{build_context, PromptBundle};
pub use provider::{LlmProvider, OpenAiConfig, OpenAiProvider, ProviderError, ScriptStep, ScriptedProvider};
pub use turn::{run_turn, summarize_actions, summarize_with_llm, TraceStep, TurnOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    /// Deterministic one-line-per-call summary.
    #[default]
    Template,
    /// One extra provider call writes the summary; falls back to the template.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssistantConfig {
    pub name: String,
    pub instructions: String,
    /// Tools this assistant may call. Empty means every registered tool.
    pub tool_names: Vec<String>,
    pub max_iterations: usize,
    pub context_char_budget: usize,
    pub summary: SummaryMode,
    #[serde(with = "duration_secs")]
    pub tool_deadline: Duration,
}

impl Default for AssistantConfig {
    fn default() -> Self {
        Self {
            name: "assistant".into(),
            instructions: "You are a helpful assistant. Use the available tools when they help answer the question."
                .into(),
            tool_names: Vec::new(),
            max_iterations: 10,
            context_char_budget: 12_000,
            summary: SummaryMode::Template,
            tool_deadline: DEFAULT_TOOL_DEADLINE,
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("assistant refers to unregistered tools: {}", .0.join(", "))]
    UnknownTools(Vec<String>),
}

impl AssistantConfig {
    pub fn validate(&self, registry: &ToolRegistry) -> Result<(), ConfigError> {
        if self.max_iterations == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        let missing: Vec<String> = self
            .tool_names
            .iter()
            .filter(|n| !registry.contains(n))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::UnknownTools(missing));
        }
        Ok(())
    }

    pub(crate) fn permits(&self, tool: &str) -> bool {
        self.tool_names.is_empty() || self.tool_names.iter().any(|t| t == tool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            call_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            call_id: None,
        }
    }

    pub(crate) fn char_len(&self) -> usize {
        self.content.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    IterationLimit,
    ProviderUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentEvent {
    TurnStarted { user_message: String },
    Reasoning { text: String },
    ToolCallIssued { call: ToolCall },
    ObservationReceived { observation: Observation },
    FinalAnswer { text: String },
    ActionSummary { text: String },
    TurnFailed {
        reason: FailureReason,
        message: String,
        /// Calls completed before the failure.
        trace: Vec<TraceStep>,
    },
}

impl AgentEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::TurnStarted { .. } => "turn_started",
            Self::Reasoning { .. } => "reasoning",
            Self::ToolCallIssued { .. } => "tool_call_issued",
            Self::ObservationReceived { .. } => "observation_received",
            Self::FinalAnswer { .. } => "final_answer",
            Self::ActionSummary { .. } => "action_summary",
            Self::TurnFailed { .. } => "turn_failed",
        }
    }
}

/// Receives events in emission order. Called from the task running the turn.
pub trait EventSink: Send + Sync {
    fn emit(&self, event: &AgentEvent);
}

/// Keeps every event in memory.
#[derive(Debug, Default)]
pub struct CollectingSink {
    events: Mutex<Vec<AgentEvent>>,
}

impl CollectingSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<AgentEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn take(&self) -> Vec<AgentEvent> {
        std::mem::take(&mut *self.events.lock().unwrap())
    }
}

impl EventSink for CollectingSink {
    fn emit(&self, event: &AgentEvent) {
        self.events.lock().unwrap().push(event.clone());
    }
}

/// Drops every event.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: &AgentEvent) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub assistant: AssistantConfig,
    pub profile: Option<String>,
    history: Vec<Message>,
    /// Index of the current turn's user message.
    turn_start: usize,
    turns: usize,
}

impl Session {
    pub fn new(session_id: impl Into<String>, assistant: AssistantConfig) -> Self {
        Self {
            session_id: session_id.into(),
            assistant,
            profile: None,
            history: Vec::new(),
            turn_start: 0,
            turns: 0,
        }
    }

    pub fn with_profile(mut self, profile: impl Into<String>) -> Self {
        self.profile = Some(profile.into());
        self
    }

    pub fn history(&self) -> &[Message] {
        &self.history
    }

    pub(crate) fn turn_start(&self) -> usize {
        self.turn_start
    }

    pub(crate) fn turns(&self) -> usize {
        self.turns
    }

    /// Applies the history effect of one event. The turn loop appends to
    /// history only through this, so replaying a session's event log onto a
    /// fresh session reproduces its history.
    pub fn apply(&mut self, event: &AgentEvent) {
        match event {
            AgentEvent::TurnStarted { user_message } => {
                self.turn_start = self.history.len();
                self.turns += 1;
                self.history.push(Message::user(user_message.clone()));
            }
            AgentEvent::Reasoning { text } => self.history.push(Message::assistant(text.clone())),
            AgentEvent::ToolCallIssued { call } => self.history.push(Message {
                role: Role::Assistant,
                content: canonical_json(&serde_json::json!({"tool": call.tool, "args": call.args})),
                call_id: Some(call.call_id.clone()),
            }),
            AgentEvent::ObservationReceived { observation } => self.history.push(Message {
                role: Role::Tool,
                content: observation_text(observation),
                call_id: Some(observation.call_id.clone()),
            }),
            AgentEvent::FinalAnswer { text } => self.history.push(Message::assistant(text.clone())),
            AgentEvent::ActionSummary { .. } | AgentEvent::TurnFailed { .. } => {}
        }
    }
}

fn observation_text(obs: &Observation) -> String {
    let v = match &obs.outcome {
        Outcome::Ok { value } => serde_json::json!({"status": "ok", "value": value}),
        Outcome::Error { error } => serde_json::json!({"status": "error", "error": error}),
    };
    canonical_json(&v)
}
