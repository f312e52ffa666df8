use serde::{Deserialize, Serialize};

use super::context::build_with_scratch;
use super::{
    parse_action, Action, AgentEvent, EventSink, FailureReason, LlmProvider, Message, PromptBundle, Session,
    SummaryMode,
};
use crate::tools::{ErrorKind, Observation, Outcome, ToolCall, ToolError, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub call: ToolCall,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnOutcome {
    Completed {
        answer: String,
        summary: String,
        trace: Vec<TraceStep>,
    },
    Failed {
        reason: FailureReason,
        message: String,
        trace: Vec<TraceStep>,
    },
}

impl TurnOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, Self::Completed { .. })
    }

    pub fn trace(&self) -> &[TraceStep] {
        match self {
            Self::Completed { trace, .. } | Self::Failed { trace, .. } => trace,
        }
    }
}

/// One line per call: `- {tool}: ok` or `- {tool}: error ({kind})`.
pub fn summarize_actions(trace: &[TraceStep]) -> String {
    if trace.is_empty() {
        return "No tools were used.".into();
    }
    trace
        .iter()
        .map(|s| match &s.observation.outcome {
            Outcome::Ok { .. } => format!("- {}: ok", s.call.tool),
            Outcome::Error { error } => format!("- {}: error ({})", s.call.tool, error.kind),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the provider for a prose summary, falling back to the template when
/// the provider fails or answers with anything but a final answer.
pub async fn summarize_with_llm(trace: &[TraceStep], llm: &dyn LlmProvider) -> String {
    let template = summarize_actions(trace);
    let bundle = PromptBundle {
        system: "Summarize the actions taken in this turn for the user in a few sentences. \
                 Respond with {\"type\": \"final\", \"text\": ...}."
            .into(),
        messages: vec![Message::user(template.clone())],
        tools: Vec::new(),
    };
    match llm.complete(&bundle).await.map(|p| parse_action(&p)) {
        Ok(Ok(Action::FinalAnswer(text))) if !text.trim().is_empty() => text,
        _ => template,
    }
}

struct Turn<'a> {
    session: &'a mut Session,
    sink: &'a dyn EventSink,
    trace: Vec<TraceStep>,
}

impl Turn<'_> {
    fn emit(&mut self, event: AgentEvent) {
        self.session.apply(&event);
        self.sink.emit(&event);
    }

    fn fail(mut self, reason: FailureReason, message: String) -> TurnOutcome {
        tracing::warn!(session = %self.session.session_id, ?reason, %message, "turn failed");
        self.emit(AgentEvent::TurnFailed {
            reason,
            message: message.clone(),
            trace: self.trace.clone(),
        });
        TurnOutcome::Failed {
            reason,
            message,
            trace: self.trace,
        }
    }
}

/// Runs one ReAct turn: context, completion, action, repeat.
///
/// Tool calls run one at a time in the order the model listed them, and
/// every result (errors included) is fed back as an observation. A
/// malformed response consumes an iteration and the next request carries a
/// corrective note that is not stored in history.
pub async fn run_turn(
    session: &mut Session,
    user_message: &str,
    llm: &dyn LlmProvider,
    registry: &ToolRegistry,
    sink: &dyn EventSink,
) -> TurnOutcome {
    let max_iterations = session.assistant.max_iterations.max(1);
    let deadline = session.assistant.tool_deadline;
    let summary_mode = session.assistant.summary;
    let mut turn = Turn {
        session,
        sink,
        trace: Vec::new(),
    };
    turn.emit(AgentEvent::TurnStarted {
        user_message: user_message.to_string(),
    });
    let turn_no = turn.session.turns();
    let mut scratch: Vec<Message> = Vec::new();
    let mut next_call = 0usize;

    for _ in 0..max_iterations {
        let bundle = build_with_scratch(turn.session, registry, &scratch);
        let payload = match llm.complete(&bundle).await {
            Ok(p) => p,
            Err(e) => return turn.fail(FailureReason::ProviderUnavailable, e.to_string()),
        };
        match parse_action(&payload) {
            Err(pf) => {
                scratch.push(Message::user(format!(
                    "Your last response was not a valid action ({}). Reply with a final answer or tool calls.",
                    pf.0
                )));
            }
            Ok(Action::FinalAnswer(text)) => {
                turn.emit(AgentEvent::FinalAnswer { text: text.clone() });
                let summary = match summary_mode {
                    SummaryMode::Template => summarize_actions(&turn.trace),
                    SummaryMode::Llm => summarize_with_llm(&turn.trace, llm).await,
                };
                turn.emit(AgentEvent::ActionSummary { text: summary.clone() });
                return TurnOutcome::Completed {
                    answer: text,
                    summary,
                    trace: turn.trace,
                };
            }
            Ok(Action::ToolCalls { calls, reasoning }) => {
                scratch.clear();
                if let Some(r) = reasoning.filter(|r| !r.trim().is_empty()) {
                    turn.emit(AgentEvent::Reasoning { text: r });
                }
                for planned in calls {
                    next_call += 1;
                    let call = ToolCall {
                        call_id: format!("t{turn_no}c{next_call}"),
                        tool: planned.tool,
                        args: planned.args,
                    };
                    turn.emit(AgentEvent::ToolCallIssued { call: call.clone() });
                    let observation = if turn.session.assistant.permits(&call.tool) {
                        registry.invoke(&call, deadline).await
                    } else {
                        Observation::error(
                            &call.call_id,
                            ToolError::new(
                                ErrorKind::UnknownTool,
                                format!("`{}` is not available to this assistant", call.tool),
                            ),
                        )
                    };
                    turn.emit(AgentEvent::ObservationReceived {
                        observation: observation.clone(),
                    });
                    turn.trace.push(TraceStep { call, observation });
                }
            }
        }
    }
    let message = format!("no final answer after {max_iterations} iterations");
    turn.fail(FailureReason::IterationLimit, message)
}
