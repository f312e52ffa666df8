//! HTTP surface: sessions and their event streams, the tool endpoints, the
//! OpenAPI document and the extension socket.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use agentkit_core::agent::{run_turn, AssistantConfig, LlmProvider, Session};
use agentkit_core::tools::{export_openapi, ErrorKind, Outcome, ServiceMeta, ToolCall, ToolRegistry};
use axum::body::Bytes;
use axum::extract::ws::WebSocketUpgrade;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::events::{EventLog, DEFAULT_EVENT_BUFFER};
use crate::hub::{ExtensionHub, DEFAULT_LIVENESS};

pub type ProviderFactory = Arc<dyn Fn() -> Arc<dyn LlmProvider> + Send + Sync>;

/// A named assistant sessions can be created with. Each session gets its own
/// provider instance from `provider`.
#[derive(Clone)]
pub struct AssistantProfile {
    pub config: AssistantConfig,
    pub provider: ProviderFactory,
}

impl AssistantProfile {
    pub fn new(config: AssistantConfig, provider: ProviderFactory) -> Self {
        Self { config, provider }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Shared bearer token; `None` disables auth.
    pub token: Option<String>,
    pub liveness: Duration,
    pub event_buffer: usize,
    pub tool_deadline: Duration,
    pub meta: ServiceMeta,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            token: None,
            liveness: DEFAULT_LIVENESS,
            event_buffer: DEFAULT_EVENT_BUFFER,
            tool_deadline: agentkit_core::tools::DEFAULT_TOOL_DEADLINE,
            meta: ServiceMeta::default(),
        }
    }
}

impl GatewayConfig {
    /// Reads `AGENTKIT_TOKEN`.
    pub fn from_env() -> Self {
        Self {
            token: std::env::var("AGENTKIT_TOKEN").ok().filter(|t| !t.is_empty()),
            ..Self::default()
        }
    }
}

struct SessionSlot {
    session: tokio::sync::Mutex<Session>,
    busy: AtomicBool,
    log: Arc<EventLog>,
    llm: Arc<dyn LlmProvider>,
}

pub struct Gateway {
    registry: Arc<ToolRegistry>,
    hub: Arc<ExtensionHub>,
    assistants: BTreeMap<String, AssistantProfile>,
    default_assistant: Option<String>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    config: GatewayConfig,
}

impl Gateway {
    /// The first assistant in `assistants` is used when a session does not
    /// name one.
    pub fn new(
        registry: Arc<ToolRegistry>,
        assistants: Vec<(String, AssistantProfile)>,
        config: GatewayConfig,
    ) -> Arc<Self> {
        let default_assistant = assistants.first().map(|(n, _)| n.clone());
        Arc::new(Self {
            hub: Arc::new(ExtensionHub::new(registry.clone(), config.liveness)),
            registry,
            assistants: assistants.into_iter().collect(),
            default_assistant,
            sessions: RwLock::new(HashMap::new()),
            config,
        })
    }

    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    pub fn hub(&self) -> &Arc<ExtensionHub> {
        &self.hub
    }

    pub fn router(self: &Arc<Self>) -> Router {
        let protected = Router::new()
            .route("/sessions", post(create_session))
            .route("/sessions/{id}/messages", post(post_message))
            .route("/sessions/{id}/events", get(stream_events))
            .route("/openapi.json", get(openapi))
            .route("/tools/{name}", post(call_tool))
            .route("/ws/extension", get(extension_socket))
            .route_layer(middleware::from_fn_with_state(self.clone(), require_token));
        Router::new()
            .route("/healthz", get(healthz))
            .merge(protected)
            .with_state(self.clone())
    }

    /// Serves until the listener fails or `shutdown` resolves.
    pub async fn serve(
        self: Arc<Self>,
        listener: TcpListener,
        shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        axum::serve(listener, self.router()).with_graceful_shutdown(shutdown).await
    }

    fn session(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.read().unwrap().get(id).cloned()
    }
}

fn error_body(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"kind": kind, "message": message.into()}}))).into_response()
}

async fn require_token(State(gw): State<Arc<Gateway>>, req: Request, next: Next) -> Response {
    let Some(expected) = gw.config.token.as_deref() else {
        return next.run(req).await;
    };
    let from_header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // Browsers cannot set headers on EventSource or WebSocket requests.
    let from_query = req
        .uri()
        .query()
        .and_then(|q| url::form_urlencoded::parse(q.as_bytes()).find(|(k, _)| k == "token").map(|(_, v)| v.into_owned()));
    let ok = from_header.is_some_and(|t| constant_time_eq(t, expected))
        || from_query.is_some_and(|t| constant_time_eq(&t, expected));
    if ok {
        next.run(req).await
    } else {
        error_body(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token")
    }
}

fn constant_time_eq(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn healthz(State(gw): State<Arc<Gateway>>) -> Json<Value> {
    let extensions: Vec<Value> = gw
        .hub
        .services()
        .into_iter()
        .map(|(id, tools)| json!({"service_id": id, "tools": tools}))
        .collect();
    Json(json!({
        "status": "ok",
        "tools": gw.registry.list().len(),
        "sessions": gw.sessions.read().unwrap().len(),
        "extensions": extensions,
        "assistants": gw.assistants.keys().collect::<Vec<_>>(),
    }))
}

#[derive(Deserialize, Default)]
struct CreateSession {
    assistant: Option<String>,
    profile: Option<String>,
}

async fn create_session(State(gw): State<Arc<Gateway>>, body: Bytes) -> Response {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return error_body(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()),
        }
    };
    let Some(name) = req.assistant.or_else(|| gw.default_assistant.clone()) else {
        return error_body(StatusCode::NOT_FOUND, "UnknownAssistant", "no assistants are configured");
    };
    let Some(profile) = gw.assistants.get(&name) else {
        return error_body(StatusCode::NOT_FOUND, "UnknownAssistant", format!("no assistant named `{name}`"));
    };
    let session_id = uuid::Uuid::new_v4().to_string();
    let mut session = Session::new(session_id.clone(), profile.config.clone());
    session.profile = req.profile;
    let slot = Arc::new(SessionSlot {
        session: tokio::sync::Mutex::new(session),
        busy: AtomicBool::new(false),
        log: Arc::new(EventLog::new(gw.config.event_buffer)),
        llm: (profile.provider)(),
    });
    gw.sessions.write().unwrap().insert(session_id.clone(), slot);
    (
        StatusCode::CREATED,
        Json(json!({"session_id": session_id, "assistant": name})),
    )
        .into_response()
}

#[derive(Deserialize)]
struct PostMessage {
    text: String,
}

async fn post_message(State(gw): State<Arc<Gateway>>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(slot) = gw.session(&id) else {
        return error_body(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`"));
    };
    let msg: PostMessage = match serde_json::from_slice(&body) {
        Ok(m) => m,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()),
    };
    if slot.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        return error_body(StatusCode::CONFLICT, "SessionBusy", "a turn is already running");
    }
    let registry = gw.registry.clone();
    let first_seq = slot.log.next_seq();
    tokio::spawn(async move {
        let mut session = slot.session.lock().await;
        run_turn(&mut session, &msg.text, slot.llm.as_ref(), &registry, slot.log.as_ref()).await;
        drop(session);
        slot.busy.store(false, Ordering::Release);
    });
    (StatusCode::ACCEPTED, Json(json!({"accepted": true, "first_seq": first_seq}))).into_response()
}

#[derive(Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
}

async fn stream_events(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Response {
    let Some(slot) = gw.session(&id) else {
        return error_body(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`"));
    };
    let header_cursor = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let sub = slot.log.subscribe(header_cursor.or(q.last_event_id));
    Sse::new(event_stream(sub)).keep_alive(KeepAlive::default()).into_response()
}

fn event_stream(sub: crate::events::Subscription) -> impl Stream<Item = Result<Event, Infallible>> {
    let crate::events::Subscription {
        replay,
        evicted_from,
        mut live,
    } = sub;
    async_stream(move |tx| async move {
        if let Some(from) = evicted_from {
            let _ = tx.send(Event::default().comment(format!("events from seq {from} were evicted"))).await;
        }
        let mut last = None;
        for item in replay {
            last = Some(item.seq);
            if tx.send(to_sse(&item)).await.is_err() {
                return;
            }
        }
        loop {
            match live.recv().await {
                Ok(item) => {
                    if last.is_some_and(|l| item.seq <= l) {
                        continue;
                    }
                    last = Some(item.seq);
                    if tx.send(to_sse(&item)).await.is_err() {
                        return;
                    }
                }
                // The client fell behind the buffer; it reconnects with
                // Last-Event-ID and replays what is still buffered.
                Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => return,
            }
        }
    })
}

fn to_sse(item: &crate::events::SequencedEvent) -> Event {
    Event::default()
        .id(item.seq.to_string())
        .data(serde_json::to_string(item).expect("events serialize"))
}

/// Bridges a producer task into a stream through a small channel.
fn async_stream<F, Fut>(producer: F) -> impl Stream<Item = Result<Event, Infallible>>
where
    F: FnOnce(tokio::sync::mpsc::Sender<Event>) -> Fut,
    Fut: std::future::Future<Output = ()> + Send + 'static,
{
    let (tx, rx) = tokio::sync::mpsc::channel(64);
    tokio::spawn(producer(tx));
    futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|e| (Ok(e), rx)) })
}

async fn openapi(State(gw): State<Arc<Gateway>>) -> Json<Value> {
    Json(export_openapi(&gw.registry, &gw.config.meta))
}

/// Status for an error observation returned from `POST /tools/{name}`.
pub fn status_for(kind: &ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::SchemaViolation => StatusCode::BAD_REQUEST,
        ErrorKind::UnknownTool => StatusCode::NOT_FOUND,
        ErrorKind::Timeout => StatusCode::GATEWAY_TIMEOUT,
        ErrorKind::ExtensionGone => StatusCode::BAD_GATEWAY,
        ErrorKind::HandlerError => StatusCode::INTERNAL_SERVER_ERROR,
        ErrorKind::Other(_) => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

async fn call_tool(State(gw): State<Arc<Gateway>>, Path(name): Path<String>, body: Bytes) -> Response {
    let args: Value = if body.iter().all(u8::is_ascii_whitespace) {
        json!({})
    } else {
        match serde_json::from_slice(&body) {
            Ok(v) => v,
            Err(e) => return error_body(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()),
        }
    };
    let call = ToolCall {
        call_id: format!("http-{}", uuid::Uuid::new_v4()),
        tool: name,
        args,
    };
    let obs = gw.registry.invoke(&call, gw.config.tool_deadline).await;
    match obs.outcome {
        Outcome::Ok { value } => (StatusCode::OK, Json(value)).into_response(),
        Outcome::Error { error } => (status_for(&error.kind), Json(json!({"error": error}))).into_response(),
    }
}

async fn extension_socket(State(gw): State<Arc<Gateway>>, ws: WebSocketUpgrade) -> Response {
    let hub = gw.hub.clone();
    ws.max_message_size(16 << 20).on_upgrade(move |socket| hub.run_socket(socket))
}
