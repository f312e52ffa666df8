use serde::Serialize;

use super::{Message, Session};
use crate::tools::{ToolDescriptor, ToolRegistry};

/// Everything a provider sees for one completion request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system: String,
    pub messages: Vec<Message>,
    pub tools: Vec<ToolDescriptor>,
}

/// Assembles instructions, profile, history and permitted tools.
///
/// History that does not fit `context_char_budget` is dropped whole,
/// oldest first. Messages belonging to the current turn are always kept.
pub fn build_context(session: &Session, registry: &ToolRegistry) -> PromptBundle {
    build_with_scratch(session, registry, &[])
}

pub(crate) fn build_with_scratch(session: &Session, registry: &ToolRegistry, scratch: &[Message]) -> PromptBundle {
    let cfg = &session.assistant;
    let mut system = cfg.instructions.clone();
    if let Some(profile) = &session.profile {
        system.push_str("\n\nUser profile:\n");
        system.push_str(profile);
    }

    let history = session.history();
    let split = session.turn_start().min(history.len());
    let (older, current) = history.split_at(split);
    let fixed: usize = current.iter().chain(scratch).map(Message::char_len).sum();
    let mut remaining = cfg.context_char_budget.saturating_sub(fixed);
    let mut keep_from = older.len();
    for (i, m) in older.iter().enumerate().rev() {
        if m.char_len() > remaining {
            break;
        }
        remaining -= m.char_len();
        keep_from = i;
    }

    let messages = older[keep_from..]
        .iter()
        .chain(current)
        .chain(scratch)
        .cloned()
        .collect();
    let tools = registry.list().into_iter().filter(|d| cfg.permits(&d.name)).collect();
    PromptBundle { system, messages, tools }
}
