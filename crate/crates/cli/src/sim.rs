//! `microscope-sim`: serve the simulated microscope's tools to a gateway.

use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use agentkit_core::ext::microscope::{microscope_tools, MicroscopeSim, SERVICE_ID};
use agentkit_gateway::connect_extension;

use crate::CliError;

pub struct SimOptions {
    pub gateway: String,
    pub latency_ms: u64,
    pub seed: u64,
    pub token: Option<String>,
}

pub async fn run(opts: SimOptions) -> Result<(), CliError> {
    let sim = Arc::new(MicroscopeSim::new(opts.seed).with_latency(Duration::from_millis(opts.latency_ms)));
    let handle = connect_extension(
        &opts.gateway,
        opts.token.as_deref(),
        SERVICE_ID,
        microscope_tools(sim),
        Duration::from_secs(5),
    )
    .await
    .map_err(|e| CliError::Failed(format!("cannot register with {}: {e}", opts.gateway)))?;
    println!("registered {} as {}: {}", opts.gateway, handle.service_id, handle.registered.join(", "));
    let _ = std::io::stdout().flush();
    let signal = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if handle.run_until(signal).await {
        return Err(CliError::Failed("the gateway closed the connection".into()));
    }
    Ok(())
}
