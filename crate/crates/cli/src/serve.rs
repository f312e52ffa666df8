//! `serve`: mount the configured tools and run the gateway until ctrl-c.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use agentkit_core::ext::coderun::{CodeRunTool, ProcessRunner};
use agentkit_core::ext::docs::docs_tools;
use agentkit_core::ext::websearch::{DuckDuckGoProvider, WebSearch, WebSearchTool};
use agentkit_core::ingest::HttpFetcher;
use agentkit_core::tools::{ToolDescriptor, ToolHandler, ToolRegistry};
use agentkit_core::HashEmbedder;
use agentkit_gateway::{Gateway, GatewayConfig};

use crate::kb::{load_kb, make_embedder, EmbedderKind};
use crate::CliError;

pub struct ServeOptions {
    pub kbs: Vec<PathBuf>,
    pub host: String,
    pub port: u16,
    pub assistant: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub web_search: bool,
    pub run_code: bool,
    pub token: Option<String>,
}

fn mount(registry: &ToolRegistry, tools: Vec<(ToolDescriptor, Arc<dyn ToolHandler>)>) -> Result<(), CliError> {
    for (d, h) in tools {
        let name = d.name.clone();
        registry
            .register(d, h)
            .map_err(|e| CliError::Failed(format!("cannot mount tool `{name}`: {e}")))?;
    }
    Ok(())
}

/// Registry with every tool the options ask for.
pub fn build_registry(opts: &ServeOptions) -> Result<Arc<ToolRegistry>, CliError> {
    let registry = Arc::new(ToolRegistry::new());
    for path in &opts.kbs {
        let kb = Arc::new(load_kb(path)?);
        let embedder = make_embedder(opts.embedder, Some(kb.dim()))?;
        mount(&registry, docs_tools(kb, embedder, None))?;
    }
    if opts.web_search {
        let provider = DuckDuckGoProvider::new().map_err(|e| CliError::Failed(e.to_string()))?;
        let fetcher = HttpFetcher::new(Duration::from_secs(10)).map_err(|e| CliError::Failed(e.to_string()))?;
        let embedder =
            HashEmbedder::new(HashEmbedder::DEFAULT_DIM).map_err(|e| CliError::Failed(e.to_string()))?;
        let search = WebSearch::new(Arc::new(provider), Arc::new(fetcher), Arc::new(embedder));
        mount(&registry, vec![(WebSearchTool::descriptor(), Arc::new(WebSearchTool::new(search)))])?;
    }
    if opts.run_code {
        let runner = ProcessRunner::from_env().map_err(|e| CliError::Failed(e.to_string()))?;
        let workdir = runner.root().join("workspace");
        std::fs::create_dir_all(&workdir)
            .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", workdir.display())))?;
        mount(&registry, vec![(CodeRunTool::descriptor(), Arc::new(CodeRunTool::new(Arc::new(runner), workdir)))])?;
    }
    Ok(registry)
}

pub async fn serve(opts: ServeOptions) -> Result<(), CliError> {
    let registry = build_registry(&opts)?;
    let assistants = crate::assistant::load_assistants(opts.assistant.as_deref())?;
    let config = GatewayConfig {
        token: opts.token.clone(),
        ..GatewayConfig::default()
    };
    let listener = tokio::net::TcpListener::bind((opts.host.as_str(), opts.port))
        .await
        .map_err(|e| CliError::Failed(format!("cannot listen on {}:{}: {e}", opts.host, opts.port)))?;
    let addr = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
    let tools: Vec<String> = registry.list().into_iter().map(|d| d.name).collect();
    tracing::info!(tools = ?tools, "mounted tools");
    let gateway = Gateway::new(registry, assistants, config);
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    gateway
        .serve(listener, shutdown)
        .await
        .map_err(|e| CliError::Failed(format!("server error: {e}")))
}
