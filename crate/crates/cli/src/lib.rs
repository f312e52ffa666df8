//! The `agentkit` command: build and query knowledge bases, run the gateway,
//! chat with an assistant and run the microscope simulator extension.
//!
//! Every option can also come from an `AGENTKIT_*` environment variable or
//! from the TOML file given with `--config`; flags win over the environment,
//! which wins over the file.

pub mod assistant;
pub mod chat;
pub mod config;
pub mod kb;
pub mod render;
pub mod serve;
pub mod sim;

use std::ffi::OsString;
use std::path::PathBuf;

use agentkit_core::ingest::ChunkPolicy;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::Layers;
use crate::kb::EmbedderKind;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// The command ran and failed: exit code 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "agentkit", version, about = "Documentation assistant gateway and tools")]
pub struct Cli {
    /// TOML file with defaults for any option.
    #[arg(long, global = true, env = "AGENTKIT_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log progress and print where each setting came from.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// Bearer token for the gateway [env: AGENTKIT_TOKEN].
    #[arg(long, global = true, value_name = "TOKEN")]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a knowledge-base artifact from a manifest.
    Ingest(IngestArgs),
    /// Search a knowledge-base artifact.
    Query(QueryArgs),
    /// Run the gateway.
    Serve(ServeArgs),
    /// Talk to an assistant through a running gateway.
    Chat(ChatArgs),
    /// Connect the simulated microscope to a gateway as an extension.
    #[command(name = "microscope-sim")]
    MicroscopeSim(SimArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Manifest (YAML or JSON) listing the document collections.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Where to write the artifact.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// `hash` (offline) or `remote` (AGENTKIT_EMBED_* endpoint).
    #[arg(long)]
    pub embedder: Option<EmbedderKind>,
    /// Hash embedder dimension [default: 256].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Characters per chunk [default: 1000].
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Characters shared by consecutive chunks [default: 200].
    #[arg(long)]
    pub overlap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Artifact written by `ingest`.
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Search text.
    #[arg(long)]
    pub query: Option<String>,
    /// Number of hits [default: 5].
    #[arg(long)]
    pub k: Option<usize>,
    /// Must match the embedder the artifact was built with [default: hash].
    #[arg(long)]
    pub embedder: Option<EmbedderKind>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Knowledge-base artifacts; one search tool is mounted per source.
    #[arg(long, value_name = "FILE")]
    pub kb: Vec<PathBuf>,
    /// [default: 127.0.0.1]
    #[arg(long)]
    pub host: Option<String>,
    /// 0 picks a free port [default: 8080].
    #[arg(long)]
    pub port: Option<u16>,
    /// JSON file defining the assistants.
    #[arg(long, value_name = "FILE")]
    pub assistant: Option<PathBuf>,
    /// Embedder used for queries against the artifacts [default: hash].
    #[arg(long)]
    pub embedder: Option<EmbedderKind>,
    /// Mount the web search tool.
    #[arg(long)]
    pub web_search: bool,
    /// Mount the code execution tool.
    #[arg(long)]
    pub run_code: bool,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Gateway base URL [default: http://127.0.0.1:8080].
    #[arg(long)]
    pub gateway: Option<String>,
    /// Assistant name; the gateway's default when omitted.
    #[arg(long)]
    pub assistant: Option<String>,
    /// Messages to send in order; read from stdin, one per line, when omitted.
    #[arg(long)]
    pub message: Vec<String>,
    /// Plain output.
    #[arg(long)]
    pub no_color: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Gateway base URL [default: http://127.0.0.1:8080].
    #[arg(long)]
    pub gateway: Option<String>,
    /// Delay added to every stage operation [default: 0].
    #[arg(long)]
    pub latency_ms: Option<u64>,
    /// Seed of the simulated specimen.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub const DEFAULT_GATEWAY: &str = "http://127.0.0.1:8080";

fn init_tracing(verbose: bool) {
    let level = if verbose { tracing::Level::INFO } else { tracing::Level::WARN };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .try_init();
}

fn section(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest(_) => "ingest",
        Command::Query(_) => "query",
        Command::Serve(_) => "serve",
        Command::Chat(_) => "chat",
        Command::MicroscopeSim(_) => "microscope-sim",
    }
}

async fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut l = Layers::load(section(&cli.command), cli.config.as_deref())?;
    let verbose = cli.verbose;
    let report = |l: &Layers| {
        if verbose {
            eprintln!("{}", l.report());
        }
    };
    match cli.command {
        Command::Ingest(a) => {
            let opts = kb::IngestOptions {
                manifest: l.path("manifest", a.manifest, "AGENTKIT_MANIFEST")?.ok_or_else(|| missing("manifest"))?,
                out: l.path("out", a.out, "AGENTKIT_OUT")?.ok_or_else(|| missing("out"))?,
                embedder: l.get_or("embedder", a.embedder, "AGENTKIT_EMBEDDER", EmbedderKind::Hash)?,
                dim: l.get_or("dim", a.dim, "AGENTKIT_EMBED_DIM", agentkit_core::HashEmbedder::DEFAULT_DIM)?,
                chunk_size: l.get_or("chunk_size", a.chunk_size, "AGENTKIT_CHUNK_SIZE", ChunkPolicy::default().chunk_size)?,
                overlap: l.get_or("overlap", a.overlap, "AGENTKIT_OVERLAP", ChunkPolicy::default().overlap)?,
            };
            report(&l);
            kb::ingest(opts).await
        }
        Command::Query(a) => {
            let kb_path = l.path("kb", a.kb, "AGENTKIT_KB")?.ok_or_else(|| missing("kb"))?;
            let query = l.require("query", a.query, "AGENTKIT_QUERY")?;
            let k = l.get_or("k", a.k, "AGENTKIT_K", 5)?;
            let embedder = l.get_or("embedder", a.embedder, "AGENTKIT_EMBEDDER", EmbedderKind::Hash)?;
            report(&l);
            kb::query(&kb_path, embedder, &query, k).await
        }
        Command::Serve(a) => {
            let opts = serve::ServeOptions {
                kbs: l.paths("kb", a.kb, "AGENTKIT_KB")?,
                host: l.get_or("host", a.host, "AGENTKIT_HOST", "127.0.0.1".to_string())?,
                port: l.get_or("port", a.port, "AGENTKIT_PORT", 8080)?,
                assistant: l.path("assistant", a.assistant, "AGENTKIT_ASSISTANT")?,
                embedder: l.get_or("embedder", a.embedder, "AGENTKIT_EMBEDDER", EmbedderKind::Hash)?,
                web_search: l.switch("web_search", a.web_search, "AGENTKIT_WEB_SEARCH")?,
                run_code: l.switch("run_code", a.run_code, "AGENTKIT_RUN_CODE")?,
                token: l.get("token", cli.token, "AGENTKIT_TOKEN")?,
            };
            report(&l);
            serve::serve(opts).await
        }
        Command::Chat(a) => {
            let opts = chat::ChatOptions {
                gateway: l.get_or("gateway", a.gateway, "AGENTKIT_GATEWAY", DEFAULT_GATEWAY.to_string())?,
                assistant: l.get("assistant", a.assistant, "AGENTKIT_ASSISTANT")?,
                messages: a.message,
                color: !l.switch("no_color", a.no_color, "AGENTKIT_NO_COLOR")?
                    && std::env::var_os("NO_COLOR").map_or(true, |v| v.is_empty())
                    && chat::stdout_is_terminal(),
                token: l.get("token", cli.token, "AGENTKIT_TOKEN")?,
            };
            report(&l);
            chat::chat(opts).await
        }
        Command::MicroscopeSim(a) => {
            let opts = sim::SimOptions {
                gateway: l.get_or("gateway", a.gateway, "AGENTKIT_GATEWAY", DEFAULT_GATEWAY.to_string())?,
                latency_ms: l.get_or("latency_ms", a.latency_ms, "AGENTKIT_LATENCY_MS", 0)?,
                seed: l.get_or(
                    "seed",
                    a.seed,
                    "AGENTKIT_SEED",
                    agentkit_core::ext::microscope::DEFAULT_WORLD_SEED,
                )?,
                token: l.get("token", cli.token, "AGENTKIT_TOKEN")?,
            };
            report(&l);
            sim::run(opts).await
        }
    }
}

fn missing(key: &str) -> CliError {
    CliError::Usage(format!(
        "missing required value `{key}`: pass --{}, or add it to the config file",
        key.replace('_', "-")
    ))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_tracing(cli.verbose);
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return 1;
        }
    };
    let result = runtime.block_on(dispatch(cli));
    // Background connections (keep-alive pools, extension sockets) must not
    // hold the process open.
    runtime.shutdown_timeout(std::time::Duration::from_millis(200));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(run(["agentkit", "--help"]), 0);
        assert_eq!(run(["agentkit", "query", "--help"]), 0);
        assert_eq!(run(["agentkit", "microscope-sim", "--help"]), 0);
        assert_eq!(run(["agentkit"]), 2);
        assert_eq!(run(["agentkit", "bogus"]), 2);
        assert_eq!(run(["agentkit", "query", "--k", "many"]), 2);
        assert_eq!(run(["agentkit", "query", "--embedder", "magic"]), 2);
    }
}
