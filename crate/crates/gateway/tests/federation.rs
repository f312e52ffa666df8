mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use agentkit_core::ext::microscope::{microscope_tools, MicroscopeSim, SERVICE_ID};
use agentkit_core::tools::{canonical_json, handler_fn, ErrorKind, Outcome, ToolCall, ToolDescriptor, ToolRegistry};
use agentkit_core::wire::{kinds, WireMessage};
use agentkit_gateway::{connect_extension, extension_socket_url, ExtensionError, GatewayClient, GatewayConfig};
use common::{openapi_paths, registry_paths, start};
use futures::{SinkExt, StreamExt};
use proptest::prelude::*;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

const T: Duration = Duration::from_secs(5);

fn delayed_echo() -> Vec<(ToolDescriptor, Arc<dyn agentkit_core::tools::ToolHandler>)> {
    vec![(
        ToolDescriptor::new(
            "echo_after",
            "Echo n after delay_ms",
            json!({"type": "object", "properties": {"n": {"type": "integer"}, "delay_ms": {"type": "integer"}}, "required": ["n", "delay_ms"]}),
        ),
        handler_fn(|args: Value| async move {
            tokio::time::sleep(Duration::from_millis(args["delay_ms"].as_u64().unwrap())).await;
            Ok(json!({"n": args["n"]}))
        }),
    )]
}

async fn assert_coherent(client: &GatewayClient, reg: &ToolRegistry) {
    assert_eq!(openapi_paths(&client.openapi().await.unwrap()), registry_paths(reg));
}

#[tokio::test]
async fn microscope_registers_and_round_trips() {
    let reg = Arc::new(ToolRegistry::new());
    let gw = start(reg.clone(), vec![], GatewayConfig::default()).await;
    let client = GatewayClient::new(&gw.base, None, T).unwrap();
    assert_coherent(&client, &reg).await;

    let remote_sim = Arc::new(MicroscopeSim::default());
    let ext = connect_extension(&gw.base, None, SERVICE_ID, microscope_tools(remote_sim), T)
        .await
        .unwrap();
    assert_eq!(ext.registered, vec!["move_stage".to_string(), "snap_image".to_string()]);
    let paths = openapi_paths(&client.openapi().await.unwrap());
    assert!(paths.contains("/tools/move_stage") && paths.contains("/tools/snap_image"));
    assert_coherent(&client, &reg).await;
    let health = client.health().await.unwrap();
    assert_eq!(health["extensions"][0]["service_id"], SERVICE_ID);

    assert_eq!(
        client.call_tool("move_stage", &json!({"dx": 10, "dy": -5})).await.unwrap(),
        (200, json!({"x": 10.0, "y": -5.0}))
    );

    // Parity: the same sequence against an in-process simulator gives the
    // same observation bytes.
    let local = ToolRegistry::new();
    for (d, h) in microscope_tools(Arc::new(MicroscopeSim::default())) {
        local.register(d, h).unwrap();
    }
    let first = ToolCall {
        call_id: "p0".into(),
        tool: "move_stage".into(),
        args: json!({"dx": 10, "dy": -5}),
    };
    local.invoke(&first, T).await;
    for (i, (dx, dy)) in [(0.1, 0.2), (1e-7, -3.3333333333333335), (-20000.0, 0.0), (123.456, 789.0123)].into_iter().enumerate() {
        let call = ToolCall {
            call_id: format!("p{}", i + 1),
            tool: "move_stage".into(),
            args: json!({"dx": dx, "dy": dy}),
        };
        let remote = reg.invoke(&call, T).await;
        let here = local.invoke(&call, T).await;
        assert_eq!(
            canonical_json(&serde_json::to_value(&remote).unwrap()),
            canonical_json(&serde_json::to_value(&here).unwrap())
        );
    }

    let (status, body) = client.call_tool("snap_image", &json!({"exposure_ms": 50})).await.unwrap();
    assert_eq!(status, 200);
    assert_eq!(body["width"], 256);

    ext.close().await;
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert!(!reg.contains("move_stage"));
    assert_coherent(&client, &reg).await;
}

#[tokio::test]
async fn registration_refusals() {
    let reg = Arc::new(ToolRegistry::new());
    reg.register(
        ToolDescriptor::new("taken", "", json!({"type": "object"})),
        handler_fn(|_| async { Ok(json!(null)) }),
    )
    .unwrap();
    let gw = start(reg.clone(), vec![], GatewayConfig::default()).await;

    let first = connect_extension(&gw.base, None, "svc", delayed_echo(), T).await.unwrap();
    let kind = |r: Result<agentkit_gateway::ExtensionHandle, ExtensionError>| match r {
        Err(ExtensionError::Refused { kind, .. }) => kind,
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("accepted"),
    };
    assert_eq!(kind(connect_extension(&gw.base, None, "svc", vec![], T).await), kinds::MALFORMED_REGISTER);
    let other = vec![(
        ToolDescriptor::new("other", "", json!({"type": "object"})),
        handler_fn(|_| async { Ok(json!(null)) }),
    )];
    assert_eq!(kind(connect_extension(&gw.base, None, "svc", other, T).await), kinds::DUPLICATE_SERVICE_ID);
    let mut colliding = delayed_echo();
    colliding.push((
        ToolDescriptor::new("fresh", "", json!({"type": "object"})),
        handler_fn(|_| async { Ok(json!(null)) }),
    ));
    assert_eq!(kind(connect_extension(&gw.base, None, "svc2", colliding, T).await), kinds::TOOL_NAME_COLLISION);
    assert!(!reg.contains("fresh"));
    let with_taken = vec![(
        ToolDescriptor::new("taken", "", json!({"type": "object"})),
        handler_fn(|_| async { Ok(json!(null)) }),
    )];
    assert_eq!(kind(connect_extension(&gw.base, None, "svc3", with_taken, T).await), kinds::TOOL_NAME_COLLISION);
    first.close().await;
}

async fn run_interleaved(reg: Arc<ToolRegistry>, delays: Vec<u64>) {
    let calls: Vec<_> = delays
        .iter()
        .enumerate()
        .map(|(n, d)| {
            let reg = reg.clone();
            let call = ToolCall {
                call_id: format!("c{n}"),
                tool: "echo_after".into(),
                args: json!({"n": n, "delay_ms": d}),
            };
            tokio::spawn(async move { reg.invoke(&call, T).await })
        })
        .collect();
    for (n, task) in calls.into_iter().enumerate() {
        let obs = task.await.unwrap();
        assert_eq!(obs.call_id, format!("c{n}"));
        match obs.outcome {
            Outcome::Ok { value } => assert_eq!(value, json!({"n": n})),
            Outcome::Error { error } => panic!("{error}"),
        }
    }
}

#[test]
fn concurrent_calls_correlate() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let reg = Arc::new(ToolRegistry::new());
    let (gw, ext) = rt.block_on(async {
        let gw = start(reg.clone(), vec![], GatewayConfig::default()).await;
        let ext = connect_extension(&gw.base, None, "echo", delayed_echo(), T).await.unwrap();
        (gw, ext)
    });
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(8));
    runner
        .run(&prop::collection::vec(0u64..40, 100), |delays| {
            rt.block_on(run_interleaved(reg.clone(), delays));
            Ok(())
        })
        .unwrap();
    rt.block_on(async move {
        ext.close().await;
        drop(gw);
    });
}

#[tokio::test]
async fn killed_extension_fails_pending_calls() {
    let reg = Arc::new(ToolRegistry::new());
    let gw = start(reg.clone(), vec![], GatewayConfig::default()).await;
    let client = GatewayClient::new(&gw.base, None, T).unwrap();
    let ext = connect_extension(&gw.base, None, "echo", delayed_echo(), T).await.unwrap();
    assert_coherent(&client, &reg).await;

    let pending: Vec<_> = (0..5)
        .map(|n| {
            let reg = reg.clone();
            tokio::spawn(async move {
                let call = ToolCall {
                    call_id: format!("k{n}"),
                    tool: "echo_after".into(),
                    args: json!({"n": n, "delay_ms": 60_000}),
                };
                reg.invoke(&call, Duration::from_secs(60)).await
            })
        })
        .collect();
    tokio::time::sleep(Duration::from_millis(200)).await;
    let killed = Instant::now();
    ext.abort();
    for task in pending {
        let obs = task.await.unwrap();
        assert_eq!(obs.error_kind(), Some(&ErrorKind::ExtensionGone));
    }
    assert!(killed.elapsed() < Duration::from_secs(5));
    assert_coherent(&client, &reg).await;
    assert!(!reg.contains("echo_after"));

    // The service id is free again.
    let again = connect_extension(&gw.base, None, "echo", delayed_echo(), T).await.unwrap();
    assert_coherent(&client, &reg).await;
    again.close().await;
}

type Raw = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn raw_connect(base: &str) -> Raw {
    let url = extension_socket_url(base).unwrap();
    tokio_tungstenite::connect_async(url.as_str()).await.unwrap().0
}

async fn recv(ws: &mut Raw) -> Option<WireMessage> {
    loop {
        match tokio::time::timeout(T, ws.next()).await.ok()?? {
            Ok(Message::Text(t)) => return Some(WireMessage::decode(t.as_str()).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

async fn send(ws: &mut Raw, text: &str) {
    ws.send(Message::text(text.to_string())).await.unwrap();
}

#[tokio::test]
async fn protocol_errors_keep_connection_open() {
    let reg = Arc::new(ToolRegistry::new());
    let gw = start(reg.clone(), vec![], GatewayConfig::default()).await;
    let mut ws = raw_connect(&gw.base).await;
    let register = WireMessage::Register {
        service_id: "raw".into(),
        tools: vec![ToolDescriptor::new("raw_tool", "", json!({"type": "object"}))],
    };
    send(&mut ws, &register.encode()).await;
    assert!(matches!(recv(&mut ws).await, Some(WireMessage::Registered { .. })));

    send(&mut ws, r#"{"type": "subscribe", "call_id": "q1"}"#).await;
    match recv(&mut ws).await {
        Some(WireMessage::Error { call_id, kind, .. }) => {
            assert_eq!(kind, kinds::UNKNOWN_TYPE);
            assert_eq!(call_id.as_deref(), Some("q1"));
        }
        other => panic!("{other:?}"),
    }
    send(&mut ws, "not json").await;
    assert!(matches!(recv(&mut ws).await, Some(WireMessage::Error { kind, .. }) if kind == kinds::MALFORMED));
    // A result nobody asked for is dropped silently.
    send(&mut ws, r#"{"type":"result","call_id":"ghost","ok":true,"value":1}"#).await;
    send(&mut ws, &WireMessage::Ping { nonce: Some(9) }.encode()).await;
    assert_eq!(recv(&mut ws).await, Some(WireMessage::Pong { nonce: Some(9) }));
    assert!(reg.contains("raw_tool"));

    // The gateway forwards a call; answer it with an error frame.
    let reg2 = reg.clone();
    let call = tokio::spawn(async move {
        let call = ToolCall {
            call_id: "h1".into(),
            tool: "raw_tool".into(),
            args: json!({}),
        };
        reg2.invoke(&call, T).await
    });
    let call_id = loop {
        match recv(&mut ws).await {
            Some(WireMessage::Invoke { call_id, tool, .. }) => {
                assert_eq!(tool, "raw_tool");
                break call_id;
            }
            Some(WireMessage::Ping { .. }) => continue,
            other => panic!("{other:?}"),
        }
    };
    send(&mut ws, &WireMessage::error(Some(call_id), "DeviceBusy", "try later").encode()).await;
    let obs = call.await.unwrap();
    assert_eq!(obs.error_kind(), Some(&ErrorKind::Other("DeviceBusy".into())));
}

#[tokio::test]
async fn first_frame_must_register() {
    let reg = Arc::new(ToolRegistry::new());
    let gw = start(reg.clone(), vec![], GatewayConfig::default()).await;
    let mut ws = raw_connect(&gw.base).await;
    send(&mut ws, &WireMessage::Ping { nonce: None }.encode()).await;
    assert!(matches!(recv(&mut ws).await, Some(WireMessage::Error { kind, .. }) if kind == kinds::MALFORMED_REGISTER));
    assert_eq!(recv(&mut ws).await, None);
}

#[tokio::test]
async fn silent_extension_is_dropped_after_liveness_interval() {
    let liveness = Duration::from_millis(300);
    let reg = Arc::new(ToolRegistry::new());
    let config = GatewayConfig {
        liveness,
        ..GatewayConfig::default()
    };
    let gw = start(reg.clone(), vec![], config).await;

    // A real client answers pings and stays registered.
    let alive = connect_extension(&gw.base, None, "alive", delayed_echo(), T).await.unwrap();

    let mut ws = raw_connect(&gw.base).await;
    let register = WireMessage::Register {
        service_id: "mute".into(),
        tools: vec![ToolDescriptor::new("mute_tool", "", json!({"type": "object"}))],
    };
    send(&mut ws, &register.encode()).await;
    assert!(matches!(recv(&mut ws).await, Some(WireMessage::Registered { .. })));
    let registered_at = Instant::now();
    // Stop reading or writing; the socket stays open.
    while reg.contains("mute_tool") {
        assert!(registered_at.elapsed() < liveness * 3, "not dropped in time");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(registered_at.elapsed() >= liveness);
    assert!(reg.contains("echo_after"));
    alive.close().await;
    drop(ws);
}
