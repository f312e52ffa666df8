//! Network service for agentkit: chat sessions with streamed agent events,
//! remote extensions over a WebSocket, and the tool/OpenAPI HTTP surface.

pub mod client;
pub mod events;
pub mod extension;
pub mod hub;
pub mod server;
pub mod sse;

pub use client::{ClientError, EventStream, GatewayClient};
pub use events::{EventLog, SequencedEvent, DEFAULT_EVENT_BUFFER};
pub use extension::{connect_extension, extension_socket_url, ExtensionError, ExtensionHandle};
pub use hub::{ExtensionHub, DEFAULT_LIVENESS};
pub use server::{AssistantProfile, Gateway, GatewayConfig, ProviderFactory};
pub use sse::{SseEvent, SseParser};
