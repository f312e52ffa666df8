//! `chat`: send messages to an assistant and print the streamed turn.

use std::io::{IsTerminal, Write};
use std::time::Duration;

use agentkit_core::agent::AgentEvent;
use agentkit_gateway::{ClientError, GatewayClient};
use tokio::io::AsyncBufReadExt;

use crate::render::{render, Style};
use crate::CliError;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);
const HEALTH_TIMEOUT: Duration = Duration::from_secs(4);
const RECONNECT_ATTEMPTS: u32 = 5;

pub struct ChatOptions {
    pub gateway: String,
    pub assistant: Option<String>,
    pub messages: Vec<String>,
    pub color: bool,
    pub token: Option<String>,
}

pub fn stdout_is_terminal() -> bool {
    std::io::stdout().is_terminal()
}

fn client_error(gateway: &str, e: ClientError) -> CliError {
    match e {
        ClientError::Unreachable(m) => CliError::Failed(format!("gateway at {gateway} is unreachable: {m}")),
        ClientError::BadUrl(u) => CliError::Usage(format!("invalid gateway URL `{u}`")),
        other => CliError::Failed(other.to_string()),
    }
}

struct Conversation {
    client: GatewayClient,
    gateway: String,
    session: String,
    last_seq: Option<u64>,
    style: Style,
}

impl Conversation {
    /// Sends one message and prints events until the turn ends. Returns
    /// whether the turn completed.
    async fn turn(&mut self, text: &str) -> Result<bool, CliError> {
        let mut stream = self
            .client
            .events(&self.session, self.last_seq)
            .await
            .map_err(|e| client_error(&self.gateway, e))?;
        self.client
            .send_message(&self.session, text)
            .await
            .map_err(|e| client_error(&self.gateway, e))?;
        let mut failures = 0;
        loop {
            match stream.next().await {
                Some(Ok(item)) => {
                    failures = 0;
                    self.last_seq = Some(item.seq);
                    if let Some(lines) = render(&item.event, self.style) {
                        println!("{lines}");
                        let _ = std::io::stdout().flush();
                    }
                    match item.event {
                        AgentEvent::ActionSummary { .. } => return Ok(true),
                        AgentEvent::TurnFailed { .. } => return Ok(false),
                        _ => {}
                    }
                }
                Some(Err(ClientError::Decode(m))) => tracing::warn!("skipping undecodable event: {m}"),
                other => {
                    failures += 1;
                    if failures > RECONNECT_ATTEMPTS {
                        let why = match other {
                            Some(Err(e)) => e.to_string(),
                            _ => "stream closed".into(),
                        };
                        return Err(CliError::Failed(format!("lost the event stream: {why}")));
                    }
                    tokio::time::sleep(Duration::from_millis(200 * u64::from(failures))).await;
                    match self.client.events(&self.session, self.last_seq).await {
                        Ok(s) => stream = s,
                        Err(e) => tracing::warn!("reconnect failed: {e}"),
                    }
                }
            }
        }
    }
}

pub async fn chat(opts: ChatOptions) -> Result<(), CliError> {
    let client = GatewayClient::new(&opts.gateway, opts.token.clone(), CONNECT_TIMEOUT)
        .map_err(|e| client_error(&opts.gateway, e))?;
    match tokio::time::timeout(HEALTH_TIMEOUT, client.health()).await {
        Ok(Ok(_)) => {}
        Ok(Err(e)) => return Err(client_error(&opts.gateway, e)),
        Err(_) => {
            return Err(CliError::Failed(format!(
                "gateway at {} did not answer within {}s",
                opts.gateway,
                HEALTH_TIMEOUT.as_secs()
            )))
        }
    }
    let session = client
        .create_session(opts.assistant.as_deref(), None)
        .await
        .map_err(|e| client_error(&opts.gateway, e))?;
    let mut conv = Conversation {
        client,
        gateway: opts.gateway.clone(),
        session,
        last_seq: None,
        style: Style { color: opts.color },
    };

    let mut failed = 0usize;
    if !opts.messages.is_empty() {
        for m in &opts.messages {
            if !conv.turn(m).await? {
                failed += 1;
            }
        }
    } else {
        let interactive = std::io::stdin().is_terminal();
        let mut lines = tokio::io::BufReader::new(tokio::io::stdin()).lines();
        loop {
            if interactive {
                print!("> ");
                let _ = std::io::stdout().flush();
            }
            let Some(line) = lines.next_line().await.map_err(|e| CliError::Failed(e.to_string()))? else {
                break;
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !conv.turn(line).await? {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} turn(s) failed")));
    }
    Ok(())
}
