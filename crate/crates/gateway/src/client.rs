//! HTTP client for the gateway's session and tool endpoints.

use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};

use crate::events::SequencedEvent;
use crate::sse::SseParser;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid gateway url `{0}`")]
    BadUrl(String),
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
    #[error("session is busy")]
    SessionBusy,
    #[error("gateway answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response: {0}")]
    Decode(String),
}

#[derive(Clone)]
pub struct GatewayClient {
    base: url::Url,
    token: Option<String>,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base: &str, token: Option<String>, connect_timeout: Duration) -> Result<Self, ClientError> {
        let mut base = url::Url::parse(base).map_err(|_| ClientError::BadUrl(base.into()))?;
        if !matches!(base.scheme(), "http" | "https") {
            return Err(ClientError::BadUrl(base.to_string()));
        }
        if !base.path().ends_with('/') {
            let p = format!("{}/", base.path());
            base.set_path(&p);
        }
        let http = reqwest::Client::builder()
            .connect_timeout(connect_timeout)
            .build()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        Ok(Self { base, token, http })
    }

    fn url(&self, path: &str) -> url::Url {
        self.base.join(path).expect("relative path joins")
    }

    fn request(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        let rb = self.http.request(method, self.url(path));
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    async fn json(&self, rb: reqwest::RequestBuilder) -> Result<(u16, Value), ClientError> {
        let resp = rb.send().await.map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))?
        };
        Ok((status, value))
    }

    fn expect(status: u16, value: Value, ok: u16) -> Result<Value, ClientError> {
        if status == ok {
            Ok(value)
        } else {
            Err(ClientError::Status {
                status,
                body: value.to_string(),
            })
        }
    }

    pub async fn health(&self) -> Result<Value, ClientError> {
        let (s, v) = self.json(self.request(reqwest::Method::GET, "healthz")).await?;
        Self::expect(s, v, 200)
    }

    pub async fn openapi(&self) -> Result<Value, ClientError> {
        let (s, v) = self.json(self.request(reqwest::Method::GET, "openapi.json")).await?;
        Self::expect(s, v, 200)
    }

    pub async fn create_session(&self, assistant: Option<&str>, profile: Option<&str>) -> Result<String, ClientError> {
        let mut body = json!({});
        if let Some(a) = assistant {
            body["assistant"] = json!(a);
        }
        if let Some(p) = profile {
            body["profile"] = json!(p);
        }
        let (s, v) = self
            .json(self.request(reqwest::Method::POST, "sessions").json(&body))
            .await?;
        let v = Self::expect(s, v, 201)?;
        v["session_id"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| ClientError::Decode("missing session_id".into()))
    }

    pub async fn send_message(&self, session_id: &str, text: &str) -> Result<(), ClientError> {
        let path = format!("sessions/{session_id}/messages");
        let (s, v) = self
            .json(self.request(reqwest::Method::POST, &path).json(&json!({"text": text})))
            .await?;
        if s == 409 {
            return Err(ClientError::SessionBusy);
        }
        Self::expect(s, v, 202).map(|_| ())
    }

    /// Calls a tool over HTTP; returns the status and body as-is.
    pub async fn call_tool(&self, name: &str, args: &Value) -> Result<(u16, Value), ClientError> {
        self.json(self.request(reqwest::Method::POST, &format!("tools/{name}")).json(args))
            .await
    }

    /// Opens the session event stream, resuming after `last_event_id`.
    pub async fn events(&self, session_id: &str, last_event_id: Option<u64>) -> Result<EventStream, ClientError> {
        let mut rb = self
            .request(reqwest::Method::GET, &format!("sessions/{session_id}/events"))
            .header("accept", "text/event-stream");
        if let Some(id) = last_event_id {
            rb = rb.header("last-event-id", id.to_string());
        }
        let resp = rb.send().await.map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.text().await.unwrap_or_default();
            return Err(ClientError::Status { status, body });
        }
        Ok(EventStream {
            body: Box::pin(resp.bytes_stream()),
            parser: SseParser::new(),
            ready: Default::default(),
        })
    }
}

type ByteStream = std::pin::Pin<Box<dyn futures::Stream<Item = reqwest::Result<bytes::Bytes>> + Send>>;

pub struct EventStream {
    body: ByteStream,
    parser: SseParser,
    ready: std::collections::VecDeque<SequencedEvent>,
}

impl EventStream {
    /// Next agent event; `None` when the server ends the stream.
    pub async fn next(&mut self) -> Option<Result<SequencedEvent, ClientError>> {
        loop {
            if let Some(e) = self.ready.pop_front() {
                return Some(Ok(e));
            }
            let chunk = match self.body.next().await? {
                Ok(c) => c,
                Err(e) => return Some(Err(ClientError::Unreachable(e.to_string()))),
            };
            for ev in self.parser.feed(&chunk) {
                match serde_json::from_str::<SequencedEvent>(&ev.data) {
                    Ok(item) => self.ready.push_back(item),
                    Err(e) => return Some(Err(ClientError::Decode(e.to_string()))),
                }
            }
        }
    }
}
