//! Remote extensions: registration over the extension socket, forwarding of
//! tool calls, result correlation and cleanup on disconnect.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use agentkit_core::tools::{
    check_input_schema, is_valid_tool_name, ErrorKind, Origin, RegistryError, ToolError, ToolHandler, ToolRegistry,
};
use agentkit_core::wire::{kinds, salvage_call_id, WireMessage};
use async_trait::async_trait;
use axum::extract::ws::{Message, WebSocket};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::sync::{mpsc, oneshot};

pub const DEFAULT_LIVENESS: Duration = Duration::from_secs(30);

type Reply = oneshot::Sender<Result<Value, ToolError>>;

/// One registered extension connection.
pub struct ExtensionConn {
    service_id: String,
    tools: Vec<String>,
    outbound: mpsc::UnboundedSender<WireMessage>,
    state: Mutex<ConnState>,
}

#[derive(Default)]
struct ConnState {
    closed: bool,
    pending: HashMap<String, Reply>,
}

impl ExtensionConn {
    pub fn service_id(&self) -> &str {
        &self.service_id
    }

    pub fn tools(&self) -> &[String] {
        &self.tools
    }

    pub fn pending_calls(&self) -> usize {
        self.state.lock().unwrap().pending.len()
    }

    fn gone(&self) -> ToolError {
        ToolError::new(
            ErrorKind::ExtensionGone,
            format!("extension `{}` disconnected", self.service_id),
        )
    }

    fn resolve(&self, call_id: &str, result: Result<Value, ToolError>) -> bool {
        let reply = self.state.lock().unwrap().pending.remove(call_id);
        match reply {
            Some(tx) => {
                let _ = tx.send(result);
                true
            }
            None => false,
        }
    }

    /// Fails every pending call with `ExtensionGone` and refuses new ones.
    fn close(&self) {
        let pending = {
            let mut st = self.state.lock().unwrap();
            st.closed = true;
            std::mem::take(&mut st.pending)
        };
        for (_, tx) in pending {
            let _ = tx.send(Err(self.gone()));
        }
    }
}

/// Forwards calls for one remote tool over its extension connection.
struct RemoteHandler {
    conn: Arc<ExtensionConn>,
    tool: String,
}

/// Drops the pending entry if the call is abandoned (for example when the
/// registry deadline fires first).
struct PendingGuard<'a> {
    conn: &'a ExtensionConn,
    call_id: String,
}

impl Drop for PendingGuard<'_> {
    fn drop(&mut self) {
        self.conn.state.lock().unwrap().pending.remove(&self.call_id);
    }
}

#[async_trait]
impl ToolHandler for RemoteHandler {
    async fn call(&self, args: Value) -> Result<Value, ToolError> {
        let call_id = uuid::Uuid::new_v4().to_string();
        let (tx, rx) = oneshot::channel();
        {
            let mut st = self.conn.state.lock().unwrap();
            if st.closed {
                return Err(self.conn.gone());
            }
            st.pending.insert(call_id.clone(), tx);
        }
        let _guard = PendingGuard {
            conn: &self.conn,
            call_id: call_id.clone(),
        };
        let invoke = WireMessage::Invoke {
            call_id,
            tool: self.tool.clone(),
            args,
        };
        if self.conn.outbound.send(invoke).is_err() {
            return Err(self.conn.gone());
        }
        rx.await.unwrap_or_else(|_| Err(self.conn.gone()))
    }
}

pub struct ExtensionHub {
    registry: Arc<ToolRegistry>,
    services: Mutex<HashMap<String, Arc<ExtensionConn>>>,
    liveness: Duration,
}

impl ExtensionHub {
    pub fn new(registry: Arc<ToolRegistry>, liveness: Duration) -> Self {
        Self {
            registry,
            services: Mutex::new(HashMap::new()),
            liveness,
        }
    }

    pub fn liveness(&self) -> Duration {
        self.liveness
    }

    /// Connected service ids with their tool names, sorted by id.
    pub fn services(&self) -> Vec<(String, Vec<String>)> {
        let mut out: Vec<_> = self
            .services
            .lock()
            .unwrap()
            .values()
            .map(|c| (c.service_id.clone(), c.tools.clone()))
            .collect();
        out.sort();
        out
    }

    /// Validates a register message and enters its tools into the registry.
    /// On success the returned connection owns the tools until `release`.
    pub fn admit(
        &self,
        msg: WireMessage,
        outbound: mpsc::UnboundedSender<WireMessage>,
    ) -> Result<Arc<ExtensionConn>, WireMessage> {
        let refuse = |kind: &str, message: String| Err(WireMessage::error(None, kind, message));
        let WireMessage::Register { service_id, tools } = msg else {
            return refuse(
                kinds::MALFORMED_REGISTER,
                format!("first message must be `register`, got `{}`", msg.type_name()),
            );
        };
        if tools.is_empty() {
            return refuse(kinds::MALFORMED_REGISTER, "register carries no tools".into());
        }
        for t in &tools {
            if !is_valid_tool_name(&t.name) {
                return refuse(kinds::MALFORMED_REGISTER, format!("invalid tool name `{}`", t.name));
            }
            if let Err(v) = check_input_schema(&t.input_schema) {
                return refuse(kinds::MALFORMED_REGISTER, format!("tool `{}`: {v}", t.name));
            }
        }

        let mut services = self.services.lock().unwrap();
        if services.contains_key(&service_id) {
            return refuse(
                kinds::DUPLICATE_SERVICE_ID,
                format!("service `{service_id}` is already connected"),
            );
        }
        let conn = Arc::new(ExtensionConn {
            service_id: service_id.clone(),
            tools: tools.iter().map(|t| t.name.clone()).collect(),
            outbound,
            state: Mutex::new(ConnState::default()),
        });
        let origin = Origin::Remote {
            service_id: service_id.clone(),
        };
        let batch = tools
            .into_iter()
            .map(|t| {
                let handler: Arc<dyn ToolHandler> = Arc::new(RemoteHandler {
                    conn: conn.clone(),
                    tool: t.name.clone(),
                });
                (t.with_origin(origin.clone()), handler)
            })
            .collect();
        match self.registry.register_batch_exclusive(batch) {
            Ok(_) => {}
            Err(RegistryError::NameCollision(names)) => {
                return refuse(
                    kinds::TOOL_NAME_COLLISION,
                    format!("tool names already registered: {}", names.join(", ")),
                )
            }
            Err(e) => return refuse(kinds::MALFORMED_REGISTER, e.to_string()),
        }
        services.insert(service_id, conn.clone());
        Ok(conn)
    }

    /// Removes a connection's tools and fails its pending calls.
    pub fn release(&self, conn: &ExtensionConn) {
        {
            let mut services = self.services.lock().unwrap();
            if services.get(&conn.service_id).is_some_and(|c| std::ptr::eq(c.as_ref(), conn)) {
                services.remove(&conn.service_id);
            }
            self.registry.deregister_service(&conn.service_id);
        }
        conn.close();
    }

    /// Drives one extension socket from the first frame to disconnect.
    pub async fn run_socket(self: Arc<Self>, socket: WebSocket) {
        let (mut sink, mut stream) = socket.split();
        let (tx, mut rx) = mpsc::unbounded_channel::<WireMessage>();

        let first = tokio::time::timeout(self.liveness, next_text(&mut stream)).await;
        let reply = match first {
            Ok(Some(Ok(text))) => match WireMessage::decode(&text) {
                Ok(msg) => self.admit(msg, tx.clone()),
                Err(e) => Err(WireMessage::error(None, kinds::MALFORMED_REGISTER, e.to_string())),
            },
            Ok(Some(Err(()))) => Err(WireMessage::error(
                None,
                kinds::MALFORMED_REGISTER,
                "first frame must be a text frame",
            )),
            Ok(None) => return,
            Err(_) => Err(WireMessage::error(
                None,
                kinds::MALFORMED_REGISTER,
                "no register message before the liveness deadline",
            )),
        };
        let conn = match reply {
            Ok(conn) => conn,
            Err(refusal) => {
                let _ = sink.send(Message::Text(refusal.encode().into())).await;
                let _ = sink.close().await;
                return;
            }
        };
        tracing::info!(service = %conn.service_id, tools = ?conn.tools, "extension registered");
        let ack = WireMessage::Registered {
            service_id: conn.service_id.clone(),
            tools: conn.tools.clone(),
        };
        if sink.send(Message::Text(ack.encode().into())).await.is_err() {
            self.release(&conn);
            return;
        }

        // Writes are serialized through this task.
        let writer = tokio::spawn(async move {
            while let Some(msg) = rx.recv().await {
                if sink.send(Message::Text(msg.encode().into())).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });

        let mut last_seen = Instant::now();
        let mut ticker = tokio::time::interval(self.liveness / 3);
        ticker.tick().await;
        let mut nonce = 0u64;
        loop {
            tokio::select! {
                frame = stream.next() => {
                    let Some(Ok(frame)) = frame else { break };
                    last_seen = Instant::now();
                    match frame {
                        Message::Text(text) => self.on_frame(&conn, &tx, text.as_str()),
                        Message::Binary(_) => {
                            let _ = tx.send(WireMessage::error(None, kinds::MALFORMED, "binary frames are not supported"));
                        }
                        Message::Close(_) => break,
                        Message::Ping(_) | Message::Pong(_) => {}
                    }
                }
                _ = ticker.tick() => {
                    if last_seen.elapsed() > self.liveness {
                        tracing::warn!(service = %conn.service_id, "extension missed liveness deadline");
                        break;
                    }
                    nonce += 1;
                    let _ = tx.send(WireMessage::Ping { nonce: Some(nonce) });
                }
            }
        }
        tracing::info!(service = %conn.service_id, "extension disconnected");
        self.release(&conn);
        drop(tx);
        writer.abort();
    }

    fn on_frame(&self, conn: &ExtensionConn, tx: &mpsc::UnboundedSender<WireMessage>, text: &str) {
        let msg = match WireMessage::decode(text) {
            Ok(m) => m,
            Err(e) => {
                let _ = tx.send(WireMessage::error(salvage_call_id(text), e.kind(), e.to_string()));
                return;
            }
        };
        match msg {
            WireMessage::Result { call_id, result } => {
                if !conn.resolve(&call_id, result) {
                    tracing::warn!(service = %conn.service_id, %call_id, "result for unknown call dropped");
                }
            }
            WireMessage::Error {
                call_id: Some(call_id),
                kind,
                message,
            } => {
                if !conn.resolve(&call_id, Err(ToolError::new(kind.as_str(), message))) {
                    tracing::warn!(service = %conn.service_id, %call_id, "error for unknown call dropped");
                }
            }
            WireMessage::Error { call_id: None, kind, message } => {
                tracing::warn!(service = %conn.service_id, %kind, %message, "extension reported an error");
            }
            WireMessage::Ping { nonce } => {
                let _ = tx.send(WireMessage::Pong { nonce });
            }
            WireMessage::Pong { .. } => {}
            WireMessage::Register { .. } => {
                let _ = tx.send(WireMessage::error(
                    None,
                    kinds::MALFORMED_REGISTER,
                    "connection is already registered",
                ));
            }
            other @ (WireMessage::Registered { .. } | WireMessage::Invoke { .. }) => {
                let call_id = match &other {
                    WireMessage::Invoke { call_id, .. } => Some(call_id.clone()),
                    _ => None,
                };
                let _ = tx.send(WireMessage::error(
                    call_id,
                    kinds::MALFORMED,
                    format!("`{}` is not accepted from an extension", other.type_name()),
                ));
            }
        }
    }
}

/// Next text frame; `Err(())` for a non-text data frame, `None` at close.
async fn next_text<S>(stream: &mut S) -> Option<Result<String, ()>>
where
    S: futures::Stream<Item = Result<Message, axum::Error>> + Unpin,
{
    loop {
        match stream.next().await? {
            Ok(Message::Text(t)) => return Some(Ok(t.to_string())),
            Ok(Message::Binary(_)) => return Some(Err(())),
            Ok(Message::Ping(_) | Message::Pong(_)) => continue,
            Ok(Message::Close(_)) | Err(_) => return None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentkit_core::tools::{ToolCall, ToolDescriptor};
    use serde_json::json;

    fn register(service: &str, names: &[&str]) -> WireMessage {
        WireMessage::Register {
            service_id: service.into(),
            tools: names
                .iter()
                .map(|n| ToolDescriptor::new(*n, "", json!({"type": "object"})))
                .collect(),
        }
    }

    #[tokio::test]
    async fn admit_rules() {
        let reg = Arc::new(ToolRegistry::new());
        let hub = ExtensionHub::new(reg.clone(), DEFAULT_LIVENESS);
        let (tx, _rx) = mpsc::unbounded_channel();
        let kind = |r: Result<Arc<ExtensionConn>, WireMessage>| match r {
            Err(WireMessage::Error { kind, .. }) => kind,
            Err(other) => panic!("{other:?}"),
            Ok(_) => "ok".to_string(),
        };
        assert_eq!(kind(hub.admit(register("a", &[]), tx.clone())), kinds::MALFORMED_REGISTER);
        assert_eq!(kind(hub.admit(register("a", &["bad-name"]), tx.clone())), kinds::MALFORMED_REGISTER);
        assert_eq!(kind(hub.admit(WireMessage::Ping { nonce: None }, tx.clone())), kinds::MALFORMED_REGISTER);
        assert_eq!(kind(hub.admit(register("a", &["t1", "t2"]), tx.clone())), "ok");
        assert_eq!(kind(hub.admit(register("a", &["t3"]), tx.clone())), kinds::DUPLICATE_SERVICE_ID);
        assert_eq!(kind(hub.admit(register("b", &["t3", "t1"]), tx.clone())), kinds::TOOL_NAME_COLLISION);
        // Nothing from the rejected batch was registered.
        assert!(!reg.contains("t3"));
        assert_eq!(hub.services(), vec![("a".to_string(), vec!["t1".to_string(), "t2".to_string()])]);
        assert_eq!(
            reg.descriptor("t1").unwrap().origin,
            Origin::Remote { service_id: "a".into() }
        );
    }

    #[tokio::test]
    async fn calls_correlate_and_fail_on_release() {
        let reg = Arc::new(ToolRegistry::new());
        let hub = Arc::new(ExtensionHub::new(reg.clone(), DEFAULT_LIVENESS));
        let (tx, mut rx) = mpsc::unbounded_channel();
        let conn = hub.admit(register("svc", &["echo", "hang"]), tx).unwrap();

        // Fake extension: answers echo, never answers hang.
        let responder = {
            let conn = conn.clone();
            tokio::spawn(async move {
                while let Some(msg) = rx.recv().await {
                    if let WireMessage::Invoke { call_id, tool, args } = msg {
                        if tool == "echo" {
                            conn.resolve(&call_id, Ok(args));
                        }
                    }
                }
            })
        };
        let call = |tool: &str, n: u64| ToolCall {
            call_id: format!("c{n}"),
            tool: tool.into(),
            args: json!({"n": n}),
        };
        let obs = reg.invoke(&call("echo", 1), Duration::from_secs(5)).await;
        assert!(obs.is_ok());

        let pending = {
            let reg = reg.clone();
            tokio::spawn(async move { reg.invoke(&call("hang", 2), Duration::from_secs(30)).await })
        };
        while conn.pending_calls() == 0 {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        hub.release(&conn);
        let obs = pending.await.unwrap();
        assert_eq!(obs.error_kind(), Some(&ErrorKind::ExtensionGone));
        assert!(!reg.contains("echo"));
        assert!(hub.services().is_empty());
        responder.abort();
    }

    #[tokio::test]
    async fn abandoned_calls_leave_no_pending_entry() {
        let reg = Arc::new(ToolRegistry::new());
        let hub = ExtensionHub::new(reg.clone(), DEFAULT_LIVENESS);
        let (tx, _rx) = mpsc::unbounded_channel();
        let conn = hub.admit(register("svc", &["hang"]), tx).unwrap();
        let call = ToolCall {
            call_id: "c".into(),
            tool: "hang".into(),
            args: json!({}),
        };
        let obs = reg.invoke(&call, Duration::from_millis(50)).await;
        assert_eq!(obs.error_kind(), Some(&ErrorKind::Timeout));
        tokio::time::sleep(Duration::from_millis(20)).await;
        assert_eq!(conn.pending_calls(), 0);
    }
}
