//! Per-session event log: sequence numbers, a bounded replay buffer and live
//! fan-out to stream subscribers.

use std::collections::VecDeque;
use std::sync::Mutex;

use agentkit_core::agent::{AgentEvent, EventSink};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub const DEFAULT_EVENT_BUFFER: usize = 1000;

/// An agent event as streamed to clients. `seq` starts at 0 per session and
/// increases by one per event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: AgentEvent,
}

pub struct EventLog {
    inner: Mutex<Inner>,
    capacity: usize,
}

struct Inner {
    next_seq: u64,
    buffer: VecDeque<SequencedEvent>,
    live: broadcast::Sender<SequencedEvent>,
}

/// What a new subscriber sees: buffered events after its cursor, then the
/// live feed. Nothing is lost or repeated between the two.
pub struct Subscription {
    pub replay: Vec<SequencedEvent>,
    /// First seq the caller asked for that was already evicted, if any.
    pub evicted_from: Option<u64>,
    pub live: broadcast::Receiver<SequencedEvent>,
}

impl EventLog {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let (live, _) = broadcast::channel(capacity);
        Self {
            inner: Mutex::new(Inner {
                next_seq: 0,
                buffer: VecDeque::with_capacity(capacity),
                live,
            }),
            capacity,
        }
    }

    pub fn push(&self, event: AgentEvent) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let item = SequencedEvent { seq, event };
        if inner.buffer.len() == self.capacity {
            inner.buffer.pop_front();
        }
        inner.buffer.push_back(item.clone());
        // No receivers is fine; the buffer still has it.
        let _ = inner.live.send(item);
        seq
    }

    /// Subscribes to events with seq greater than `after` (all buffered
    /// events when `None`).
    pub fn subscribe(&self, after: Option<u64>) -> Subscription {
        let inner = self.inner.lock().unwrap();
        let first_wanted = after.map_or(0, |s| s + 1);
        let oldest = inner.buffer.front().map_or(inner.next_seq, |e| e.seq);
        let replay = inner.buffer.iter().filter(|e| e.seq >= first_wanted).cloned().collect();
        Subscription {
            replay,
            evicted_from: (first_wanted < oldest).then_some(first_wanted),
            live: inner.live.subscribe(),
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.inner.lock().unwrap().next_seq
    }

    pub fn snapshot(&self) -> Vec<SequencedEvent> {
        self.inner.lock().unwrap().buffer.iter().cloned().collect()
    }
}

impl EventSink for EventLog {
    fn emit(&self, event: &AgentEvent) {
        self.push(event.clone());
    }
}
