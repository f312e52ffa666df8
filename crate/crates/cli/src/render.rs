//! Terminal rendering of agent events for `agentkit chat`.

use agentkit_core::agent::AgentEvent;
use agentkit_core::tools::Outcome;
use serde_json::Value;

/// Longest observation body printed before it is cut.
pub const OBSERVATION_PREVIEW: usize = 4000;

const DIM: &str = "\x1b[2m";
const BOLD_GREEN: &str = "\x1b[1;32m";
const RED: &str = "\x1b[31m";
const CYAN: &str = "\x1b[36m";
const RESET: &str = "\x1b[0m";

#[derive(Debug, Clone, Copy)]
pub struct Style {
    pub color: bool,
}

impl Style {
    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("{code}{text}{RESET}")
        } else {
            text.to_string()
        }
    }
}

fn indent(text: &str, prefix: &str) -> String {
    text.lines().map(|l| format!("{prefix}{l}")).collect::<Vec<_>>().join("\n")
}

fn preview(v: &Value) -> String {
    let text = serde_json::to_string_pretty(v).unwrap_or_default();
    if text.chars().count() <= OBSERVATION_PREVIEW {
        return text;
    }
    let cut: String = text.chars().take(OBSERVATION_PREVIEW).collect();
    format!("{cut}\n... ({} more characters)", text.chars().count() - OBSERVATION_PREVIEW)
}

/// Lines for one event; `None` for events that are not shown.
pub fn render(event: &AgentEvent, style: Style) -> Option<String> {
    Some(match event {
        AgentEvent::TurnStarted { .. } => return None,
        AgentEvent::Reasoning { text } => style.paint(DIM, &indent(text, "  ")),
        AgentEvent::ToolCallIssued { call } => style.paint(
            CYAN,
            &format!("  -> {} {}", call.tool, serde_json::to_string(&call.args).unwrap_or_default()),
        ),
        AgentEvent::ObservationReceived { observation } => match &observation.outcome {
            Outcome::Ok { value } => indent(&preview(value), "     "),
            Outcome::Error { error } => style.paint(RED, &indent(&format!("error {}: {}", error.kind, error.message), "     ")),
        },
        AgentEvent::FinalAnswer { text } => style.paint(BOLD_GREEN, text),
        AgentEvent::ActionSummary { text } => style.paint(DIM, &indent(text, "  ")),
        AgentEvent::TurnFailed { reason, message, .. } => {
            style.paint(RED, &format!("turn failed ({reason:?}): {message}"))
        }
    })
}
