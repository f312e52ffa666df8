//! Incremental parser for `text/event-stream` bodies, used by the terminal
//! chat client and tests.

/// One dispatched event. `id` is the last id seen on the stream so far, as
/// a reconnecting client would send in `Last-Event-ID`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SseEvent {
    pub id: Option<String>,
    pub event: String,
    pub data: String,
    pub retry: Option<u64>,
}

#[derive(Debug, Default)]
pub struct SseParser {
    pending: Vec<u8>,
    started: bool,
    last_id: Option<String>,
    event: Option<String>,
    data: Option<String>,
    retry: Option<u64>,
}

impl SseParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_event_id(&self) -> Option<&str> {
        self.last_id.as_deref()
    }

    /// Feeds raw bytes and returns every event completed by them. Partial
    /// lines (including a CR that may be followed by LF) stay buffered.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<SseEvent> {
        self.pending.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < self.pending.len() {
            let b = self.pending[i];
            if b == b'\n' || b == b'\r' {
                let end = i;
                if b == b'\r' {
                    match self.pending.get(i + 1) {
                        Some(b'\n') => i += 1,
                        Some(_) => {}
                        // Need the next byte to know whether this is CRLF.
                        None => break,
                    }
                }
                let line = self.pending[start..end].to_vec();
                self.line(&line, &mut out);
                start = i + 1;
            }
            i += 1;
        }
        self.pending.drain(..start);
        out
    }

    fn line(&mut self, raw: &[u8], out: &mut Vec<SseEvent>) {
        let mut raw = raw;
        if !self.started {
            self.started = true;
            if let Some(rest) = raw.strip_prefix("\u{feff}".as_bytes()) {
                raw = rest;
            }
        }
        let line = String::from_utf8_lossy(raw);
        if line.is_empty() {
            self.dispatch(out);
            return;
        }
        if line.starts_with(':') {
            return;
        }
        let (field, value) = match line.find(':') {
            Some(pos) => {
                let v = &line[pos + 1..];
                (&line[..pos], v.strip_prefix(' ').unwrap_or(v))
            }
            None => (&line[..], ""),
        };
        match field {
            "event" => self.event = Some(value.to_string()),
            "data" => {
                let data = self.data.get_or_insert_with(String::new);
                data.push_str(value);
                data.push('\n');
            }
            "id" if !value.contains('\0') => self.last_id = Some(value.to_string()),
            "retry" => {
                if !value.is_empty() && value.bytes().all(|b| b.is_ascii_digit()) {
                    self.retry = value.parse().ok();
                }
            }
            _ => {}
        }
    }

    fn dispatch(&mut self, out: &mut Vec<SseEvent>) {
        let retry = self.retry.take();
        let Some(mut data) = self.data.take() else {
            self.event = None;
            return;
        };
        data.pop();
        out.push(SseEvent {
            id: self.last_id.clone(),
            event: self.event.take().unwrap_or_else(|| "message".into()),
            data,
            retry,
        });
    }
}
