use serde_json::{json, Value};
use thiserror::Error;

/// A tool call as requested by the model, before it is given a call id.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedCall {
    pub tool: String,
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    FinalAnswer(String),
    ToolCalls {
        calls: Vec<PlannedCall>,
        reasoning: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid action: {0}")]
pub struct ParseFailure(pub String);

impl Action {
    pub fn final_answer(text: impl Into<String>) -> Self {
        Self::FinalAnswer(text.into())
    }

    pub fn call(tool: impl Into<String>, args: Value) -> Self {
        Self::ToolCalls {
            calls: vec![PlannedCall {
                tool: tool.into(),
                args,
            }],
            reasoning: None,
        }
    }

    /// The provider payload that parses back to this action.
    pub fn to_payload(&self) -> Value {
        match self {
            Self::FinalAnswer(text) => json!({"type": "final", "text": text}),
            Self::ToolCalls { calls, reasoning } => {
                let calls: Vec<Value> = calls.iter().map(|c| json!({"tool": c.tool, "args": c.args})).collect();
                let mut v = json!({"type": "tool_calls", "calls": calls});
                if let Some(r) = reasoning {
                    v["reasoning"] = json!(r);
                }
                v
            }
        }
    }
}

fn fail(msg: impl Into<String>) -> ParseFailure {
    ParseFailure(msg.into())
}

/// Maps a provider payload to an action.
///
/// Accepted shapes are `{"type": "final", "text": ...}` and
/// `{"type": "tool_calls", "reasoning"?: ..., "calls": [{"tool", "args"}]}`.
/// A missing `args` means `{}`.
pub fn parse_action(payload: &Value) -> Result<Action, ParseFailure> {
    let obj = payload.as_object().ok_or_else(|| fail("response must be a JSON object"))?;
    match obj.get("type").and_then(Value::as_str) {
        Some("final") => {
            let text = obj
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| fail("final answer needs a string `text`"))?;
            Ok(Action::FinalAnswer(text.to_string()))
        }
        Some("tool_calls") => {
            let reasoning = match obj.get("reasoning") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(fail("`reasoning` must be a string")),
            };
            let calls = obj
                .get("calls")
                .and_then(Value::as_array)
                .ok_or_else(|| fail("tool_calls needs a `calls` list"))?;
            if calls.is_empty() {
                return Err(fail("`calls` must not be empty"));
            }
            let calls = calls
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let tool = c
                        .get("tool")
                        .and_then(Value::as_str)
                        .filter(|t| !t.is_empty())
                        .ok_or_else(|| fail(format!("call {i} needs a non-empty `tool`")))?;
                    let args = match c.get("args") {
                        None | Some(Value::Null) => json!({}),
                        Some(a @ Value::Object(_)) => a.clone(),
                        Some(_) => return Err(fail(format!("call {i}: `args` must be an object"))),
                    };
                    Ok(PlannedCall {
                        tool: tool.to_string(),
                        args,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Action::ToolCalls { calls, reasoning })
        }
        Some(other) => Err(fail(format!("unknown action type `{other}`"))),
        None => Err(fail("missing string field `type`")),
    }
}
