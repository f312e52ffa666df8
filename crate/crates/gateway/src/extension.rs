//! Client side of the extension socket: connect, register a set of local
//! tools, then serve `invoke` frames until the connection ends.

use std::sync::Arc;
use std::time::Duration;

use agentkit_core::tools::{Outcome, ToolCall, ToolDescriptor, ToolHandler, ToolRegistry};
use agentkit_core::wire::{kinds, salvage_call_id, WireMessage};
use futures::{SinkExt, StreamExt};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::http::HeaderValue;
use tokio_tungstenite::tungstenite::Message;

/// Deadline applied by the extension to its own handlers. The gateway
/// enforces the caller-facing deadline.
const LOCAL_DEADLINE: Duration = Duration::from_secs(600);

#[derive(Debug, thiserror::Error)]
pub enum ExtensionError {
    #[error("invalid gateway url `{0}`")]
    BadUrl(String),
    #[error("cannot connect to gateway: {0}")]
    Connect(String),
    #[error("gateway refused registration: {kind}: {message}")]
    Refused { kind: String, message: String },
    #[error("connection closed during registration")]
    Closed,
    #[error("invalid local tool: {0}")]
    LocalTool(String),
}

/// Turns a gateway base URL (`http://host:port`) or a full socket URL into
/// the extension socket URL.
pub fn extension_socket_url(gateway: &str) -> Result<url::Url, ExtensionError> {
    let mut url = url::Url::parse(gateway).map_err(|_| ExtensionError::BadUrl(gateway.into()))?;
    let scheme = match url.scheme() {
        "http" | "ws" => "ws",
        "https" | "wss" => "wss",
        _ => return Err(ExtensionError::BadUrl(gateway.into())),
    };
    url.set_scheme(scheme).map_err(|_| ExtensionError::BadUrl(gateway.into()))?;
    if !url.path().ends_with("/ws/extension") {
        let base = url.path().trim_end_matches('/').to_string();
        url.set_path(&format!("{base}/ws/extension"));
    }
    Ok(url)
}

pub struct ExtensionHandle {
    pub service_id: String,
    pub registered: Vec<String>,
    task: JoinHandle<()>,
    stop: Option<oneshot::Sender<()>>,
}

impl ExtensionHandle {
    /// Resolves when the gateway closes the connection.
    pub async fn wait(mut self) {
        self.stop.take();
        let _ = (&mut self.task).await;
    }

    /// Closes the connection; pending gateway calls see `ExtensionGone`.
    pub async fn close(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serves until the gateway closes the connection (returns `true`) or
    /// `signal` resolves, in which case the connection is closed first.
    pub async fn run_until(mut self, signal: impl std::future::Future<Output = ()>) -> bool {
        let gone = tokio::select! {
            _ = &mut self.task => true,
            _ = signal => false,
        };
        if !gone {
            self.close().await;
        }
        gone
    }

    /// Drops the connection without a close handshake, as a crash would.
    pub fn abort(self) {
        self.task.abort();
    }
}

/// Connects, registers `tools` under `service_id` and spawns the serving
/// loop. Returns once the gateway has acknowledged the registration.
pub async fn connect_extension(
    gateway: &str,
    token: Option<&str>,
    service_id: &str,
    tools: Vec<(ToolDescriptor, Arc<dyn ToolHandler>)>,
    connect_timeout: Duration,
) -> Result<ExtensionHandle, ExtensionError> {
    let local = Arc::new(ToolRegistry::new());
    let descriptors: Vec<ToolDescriptor> = tools.iter().map(|(d, _)| d.clone()).collect();
    for (d, h) in tools {
        local.register(d, h).map_err(|e| ExtensionError::LocalTool(e.to_string()))?;
    }

    let url = extension_socket_url(gateway)?;
    let mut request = url
        .as_str()
        .into_client_request()
        .map_err(|e| ExtensionError::Connect(e.to_string()))?;
    if let Some(t) = token {
        let value = HeaderValue::from_str(&format!("Bearer {t}")).map_err(|e| ExtensionError::Connect(e.to_string()))?;
        request.headers_mut().insert("authorization", value);
    }
    let (socket, _) = tokio::time::timeout(connect_timeout, tokio_tungstenite::connect_async(request))
        .await
        .map_err(|_| ExtensionError::Connect("timed out".into()))?
        .map_err(|e| ExtensionError::Connect(e.to_string()))?;
    let (mut sink, mut stream) = socket.split();

    let register = WireMessage::Register {
        service_id: service_id.to_string(),
        tools: descriptors,
    };
    sink.send(Message::text(register.encode()))
        .await
        .map_err(|e| ExtensionError::Connect(e.to_string()))?;

    let registered = loop {
        let frame = tokio::time::timeout(connect_timeout, stream.next())
            .await
            .map_err(|_| ExtensionError::Connect("no registration reply".into()))?;
        let text = match frame {
            Some(Ok(Message::Text(t))) => t.to_string(),
            Some(Ok(Message::Close(_))) | None => return Err(ExtensionError::Closed),
            Some(Ok(_)) => continue,
            Some(Err(e)) => return Err(ExtensionError::Connect(e.to_string())),
        };
        match WireMessage::decode(&text) {
            Ok(WireMessage::Registered { tools, .. }) => break tools,
            Ok(WireMessage::Error { kind, message, .. }) => return Err(ExtensionError::Refused { kind, message }),
            Ok(WireMessage::Ping { nonce }) => {
                let _ = sink.send(Message::text(WireMessage::Pong { nonce }.encode())).await;
            }
            _ => {
                return Err(ExtensionError::Refused {
                    kind: kinds::MALFORMED.into(),
                    message: format!("unexpected reply: {text}"),
                })
            }
        }
    };

    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<WireMessage>();
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let mut writer = AbortOnDrop(tokio::spawn(async move {
            while let Some(msg) = out_rx.recv().await {
                if sink.send(Message::text(msg.encode())).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        }));
        // A dropped sender means "serve until the gateway closes".
        let mut stop_rx = Some(stop_rx);
        loop {
            tokio::select! {
                frame = stream.next() => {
                    let text = match frame {
                        Some(Ok(Message::Text(t))) => t.to_string(),
                        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                        Some(Ok(_)) => continue,
                    };
                    serve_frame(&local, &out_tx, &text);
                }
                stopped = async {
                    match stop_rx.as_mut() {
                        Some(rx) => rx.await.is_ok(),
                        None => futures::future::pending().await,
                    }
                } => {
                    if stopped {
                        break;
                    }
                    stop_rx = None;
                }
            }
        }
        drop(out_tx);
        let _ = (&mut writer.0).await;
    });

    Ok(ExtensionHandle {
        service_id: service_id.to_string(),
        registered,
        task,
        stop: Some(stop_tx),
    })
}

/// Aborting the serving task must also drop the writer's half of the socket.
struct AbortOnDrop(JoinHandle<()>);

impl Drop for AbortOnDrop {
    fn drop(&mut self) {
        self.0.abort();
    }
}

fn serve_frame(local: &Arc<ToolRegistry>, out: &mpsc::UnboundedSender<WireMessage>, text: &str) {
    match WireMessage::decode(text) {
        Ok(WireMessage::Invoke { call_id, tool, args }) => {
            let local = local.clone();
            let out = out.clone();
            tokio::spawn(async move {
                let call = ToolCall { call_id, tool, args };
                let obs = local.invoke(&call, LOCAL_DEADLINE).await;
                let result = match obs.outcome {
                    Outcome::Ok { value } => Ok(value),
                    Outcome::Error { error } => Err(error),
                };
                let _ = out.send(WireMessage::Result {
                    call_id: obs.call_id,
                    result,
                });
            });
        }
        Ok(WireMessage::Ping { nonce }) => {
            let _ = out.send(WireMessage::Pong { nonce });
        }
        Ok(WireMessage::Pong { .. }) => {}
        Ok(WireMessage::Error { kind, message, .. }) => {
            tracing::warn!(%kind, %message, "gateway reported an error");
        }
        Ok(other) => {
            let _ = out.send(WireMessage::error(
                None,
                kinds::MALFORMED,
                format!("`{}` is not accepted by an extension", other.type_name()),
            ));
        }
        Err(e) => {
            let _ = out.send(WireMessage::error(salvage_call_id(text), e.kind(), e.to_string()));
        }
    }
}
