//! Running model-written code in a child process and turning failures into
//! observations the model can act on.

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};
use std::process::Stdio;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt};

use crate::tools::{ToolDescriptor, ToolError, ToolHandler};

pub const OUTPUT_CAP: usize = 64 * 1024;
pub const STDERR_TAIL_LINES: usize = 40;
pub const MIN_TIMEOUT_S: u64 = 1;
pub const MAX_TIMEOUT_S: u64 = 300;
pub const DEFAULT_TIMEOUT_S: u64 = 60;

const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "LC_ALL", "LC_CTYPE", "TZ", "SYSTEMROOT"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitStatus {
    Exited { code: i32 },
    Signaled { signal: i32 },
    TimedOut,
}

impl ExitStatus {
    pub fn success(&self) -> bool {
        *self == Self::Exited { code: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run's workdir.
    pub path: String,
    pub bytes: u64,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: f64,
    pub artifacts: Vec<Artifact>,
}

impl ExecutionResult {
    pub fn success(stdout: impl Into<String>) -> Self {
        Self {
            exit_status: ExitStatus::Exited { code: 0 },
            stdout: stdout.into(),
            stderr: String::new(),
            wall_time: 0.0,
            artifacts: Vec::new(),
        }
    }

    pub fn failure(code: i32, stderr: impl Into<String>) -> Self {
        Self {
            exit_status: ExitStatus::Exited { code },
            stdout: String::new(),
            stderr: stderr.into(),
            wall_time: 0.0,
            artifacts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeRunError {
    #[error("code runner unavailable: {0}")]
    RunnerUnavailable(String),
    #[error("workdir not allowed: {0}")]
    WorkdirDenied(String),
    #[error("timeout must be between {MIN_TIMEOUT_S} and {MAX_TIMEOUT_S} seconds, got {0:?}")]
    InvalidTimeout(Duration),
    #[error("i/o error: {0}")]
    Io(String),
}

#[async_trait]
pub trait CodeRunner: Send + Sync {
    /// `workdir` is relative to the runner's root (or absolute inside it).
    async fn run(&self, source: &str, timeout: Duration, workdir: &Path) -> Result<ExecutionResult, CodeRunError>;
}

pub(crate) fn check_timeout(timeout: Duration) -> Result<(), CodeRunError> {
    let range = Duration::from_secs(MIN_TIMEOUT_S)..=Duration::from_secs(MAX_TIMEOUT_S);
    if range.contains(&timeout) {
        Ok(())
    } else {
        Err(CodeRunError::InvalidTimeout(timeout))
    }
}

pub fn source_digest(source: &str) -> String {
    Sha256::digest(source.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Returns scripted results keyed by the SHA-256 of the source.
#[derive(Debug, Clone, Default)]
pub struct MockRunner {
    results: HashMap<String, ExecutionResult>,
}

impl MockRunner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, source: &str, result: ExecutionResult) -> Self {
        self.results.insert(source_digest(source), result);
        self
    }
}

#[async_trait]
impl CodeRunner for MockRunner {
    async fn run(&self, source: &str, timeout: Duration, _workdir: &Path) -> Result<ExecutionResult, CodeRunError> {
        check_timeout(timeout)?;
        self.results.get(&source_digest(source)).cloned().ok_or_else(|| {
            CodeRunError::RunnerUnavailable(format!("no scripted result for source {}", source_digest(source)))
        })
    }
}

/// Keeps the last `cap` bytes, cut at a character boundary.
pub fn cap_tail(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut start = text.len() - cap;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

async fn read_tail<R: AsyncRead + Unpin>(mut reader: R, cap: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match reader.read(&mut chunk).await {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if buf.len() > 2 * cap {
                    buf.drain(..buf.len() - cap);
                }
            }
        }
    }
    buf
}

/// Lexically resolves `..` and `.`, without touching the filesystem.
fn normalize_lexically(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Some(out)
}

type Snapshot = BTreeMap<PathBuf, (u64, Option<SystemTime>)>;

fn snapshot(dir: &Path) -> Snapshot {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| {
            let meta = e.metadata().ok()?;
            Some((e.path().to_path_buf(), (meta.len(), meta.modified().ok())))
        })
        .collect()
}

/// Runs source files with a configured interpreter inside a confined
/// working directory.
#[derive(Debug, Clone)]
pub struct ProcessRunner {
    command: Vec<String>,
    root: PathBuf,
    env_allowlist: Vec<String>,
}

impl ProcessRunner {
    /// `command` is the interpreter plus any leading arguments; the source
    /// file path is appended.
    pub fn new(command: Vec<String>, root: impl Into<PathBuf>) -> Result<Self, CodeRunError> {
        if command.is_empty() {
            return Err(CodeRunError::RunnerUnavailable("empty interpreter command".into()));
        }
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CodeRunError::Io(e.to_string()))?;
        let root = root.canonicalize().map_err(|e| CodeRunError::Io(e.to_string()))?;
        Ok(Self {
            command,
            root,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Reads `AGENTKIT_RUNNER_CMD` (default `python3`) and
    /// `AGENTKIT_RUNNER_ROOT` (default a directory under the system temp dir).
    pub fn from_env() -> Result<Self, CodeRunError> {
        let cmd = std::env::var("AGENTKIT_RUNNER_CMD").unwrap_or_else(|_| "python3".into());
        let root = std::env::var("AGENTKIT_RUNNER_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|_| std::env::temp_dir().join("agentkit-runs"));
        Self::new(cmd.split_whitespace().map(String::from).collect(), root)
    }

    pub fn with_env_allowlist(mut self, names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.env_allowlist = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve_workdir(&self, workdir: &Path) -> Result<PathBuf, CodeRunError> {
        let denied = || CodeRunError::WorkdirDenied(workdir.display().to_string());
        let joined = if workdir.is_absolute() {
            workdir.to_path_buf()
        } else {
            self.root.join(workdir)
        };
        let lexical = normalize_lexically(&joined).ok_or_else(denied)?;
        if !lexical.starts_with(&self.root) {
            return Err(denied());
        }
        std::fs::create_dir_all(&lexical).map_err(|e| CodeRunError::Io(e.to_string()))?;
        // Symlinks inside the root could still point elsewhere.
        let real = lexical.canonicalize().map_err(|e| CodeRunError::Io(e.to_string()))?;
        if !real.starts_with(&self.root) {
            return Err(denied());
        }
        Ok(real)
    }
}

#[async_trait]
impl CodeRunner for ProcessRunner {
    async fn run(&self, source: &str, timeout: Duration, workdir: &Path) -> Result<ExecutionResult, CodeRunError> {
        check_timeout(timeout)?;
        let workdir = self.resolve_workdir(workdir)?;
        let script_dir = tempfile::tempdir().map_err(|e| CodeRunError::Io(e.to_string()))?;
        let script = script_dir.path().join("main.py");
        std::fs::write(&script, source).map_err(|e| CodeRunError::Io(e.to_string()))?;
        let before = snapshot(&workdir);

        let mut cmd = tokio::process::Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .arg(&script)
            .current_dir(&workdir)
            .env_clear()
            .env("HOME", &workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        for name in &self.env_allowlist {
            if let Ok(v) = std::env::var(name) {
                cmd.env(name, v);
            }
        }
        #[cfg(unix)]
        cmd.process_group(0);

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| {
            CodeRunError::RunnerUnavailable(format!("cannot start `{}`: {e}", self.command[0]))
        })?;
        let stdout = tokio::spawn(read_tail(child.stdout.take().expect("piped"), OUTPUT_CAP));
        let stderr = tokio::spawn(read_tail(child.stderr.take().expect("piped"), OUTPUT_CAP));

        let exit_status = match tokio::time::timeout(timeout, child.wait()).await {
            Ok(status) => {
                let status = status.map_err(|e| CodeRunError::Io(e.to_string()))?;
                match status.code() {
                    Some(code) => ExitStatus::Exited { code },
                    None => {
                        #[cfg(unix)]
                        let signal = std::os::unix::process::ExitStatusExt::signal(&status).unwrap_or(0);
                        #[cfg(not(unix))]
                        let signal = 0;
                        ExitStatus::Signaled { signal }
                    }
                }
            }
            Err(_) => {
                kill_tree(&mut child);
                let _ = child.wait().await;
                ExitStatus::TimedOut
            }
        };
        let wall_time = started.elapsed().as_secs_f64();
        // Output readers end when every holder of the pipes is gone.
        let stdout = stdout.await.unwrap_or_default();
        let stderr = stderr.await.unwrap_or_default();

        let after = snapshot(&workdir);
        let artifacts = after
            .iter()
            .filter(|(path, meta)| before.get(*path) != Some(meta))
            .map(|(path, (len, _))| {
                let rel = path.strip_prefix(&workdir).unwrap_or(path);
                Artifact {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    bytes: *len,
                    media_type: mime_guess::from_path(path).first_or_octet_stream().to_string(),
                }
            })
            .collect();

        Ok(ExecutionResult {
            exit_status,
            stdout: cap_tail(&String::from_utf8_lossy(&stdout), OUTPUT_CAP),
            stderr: cap_tail(&String::from_utf8_lossy(&stderr), OUTPUT_CAP),
            wall_time,
            artifacts,
        })
    }
}

fn kill_tree(child: &mut tokio::process::Child) {
    #[cfg(unix)]
    if let Some(pid) = child.id() {
        // The child leads its own process group; signal all of it.
        unsafe {
            libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
        }
        return;
    }
    let _ = child.start_kill();
}

/// Status line, the last 40 stderr lines and a prompt to retry. Returns
/// `None` for a successful run, which must not be reported as an error.
pub fn format_error_observation(result: &ExecutionResult) -> Option<String> {
    let status = match &result.exit_status {
        ExitStatus::Exited { code: 0 } => return None,
        ExitStatus::Exited { code } => format!(
            "Execution failed with exit status {code} after {:.2}s.",
            result.wall_time
        ),
        ExitStatus::Signaled { signal } => format!(
            "Execution was terminated by signal {signal} after {:.2}s.",
            result.wall_time
        ),
        ExitStatus::TimedOut => format!(
            "Execution timed out and was killed after {:.2}s.",
            result.wall_time
        ),
    };
    let lines: Vec<&str> = result.stderr.lines().collect();
    let tail = &lines[lines.len().saturating_sub(STDERR_TAIL_LINES)..];
    let mut text = status;
    if !tail.is_empty() {
        text.push_str(&format!("\nstderr (last {} lines):\n", tail.len()));
        text.push_str(&tail.join("\n"));
    }
    text.push_str("\nFix the problem and call run_code again with the corrected code.");
    Some(text)
}

/// The `run_code` tool. Every call runs in the same workdir, which acts as
/// the session's mounted folder.
pub struct CodeRunTool {
    runner: Arc<dyn CodeRunner>,
    workdir: PathBuf,
}

impl CodeRunTool {
    pub fn new(runner: Arc<dyn CodeRunner>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            runner,
            workdir: workdir.into(),
        }
    }

    pub fn descriptor() -> ToolDescriptor {
        ToolDescriptor::new(
            "run_code",
            "Execute Python code and return its output. Files written to the working directory are reported as artifacts.",
            json!({
                "type": "object",
                "properties": {
                    "code": {"type": "string", "description": "Complete program source"},
                    "timeout_s": {"type": "integer", "default": DEFAULT_TIMEOUT_S, "description": "Seconds before the run is killed (1-300)"}
                },
                "required": ["code"]
            }),
        )
    }
}

#[async_trait]
impl ToolHandler for CodeRunTool {
    async fn call(&self, args: Value) -> Result<Value, ToolError> {
        let code = args["code"].as_str().unwrap_or_default();
        let timeout_s = args["timeout_s"].as_f64().unwrap_or(DEFAULT_TIMEOUT_S as f64);
        let timeout = Duration::try_from_secs_f64(timeout_s).unwrap_or(Duration::ZERO);
        let result = self.runner.run(code, timeout, &self.workdir).await.map_err(|e| {
            let kind = match e {
                CodeRunError::RunnerUnavailable(_) => "RunnerUnavailable",
                CodeRunError::WorkdirDenied(_) => "WorkdirDenied",
                CodeRunError::InvalidTimeout(_) => "InvalidArgument",
                CodeRunError::Io(_) => "HandlerError",
            };
            ToolError::new(kind, e.to_string())
        })?;
        match format_error_observation(&result) {
            None => Ok(serde_json::to_value(&result).expect("result serializes")),
            Some(text) => Err(ToolError::new("ExecutionError", text)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_observation_keeps_last_40_lines() {
        let stderr: String = (1..=100).map(|i| format!("line {i}\n")).collect();
        let text = format_error_observation(&ExecutionResult::failure(1, stderr)).unwrap();
        assert!(text.starts_with("Execution failed with exit status 1"));
        assert!(text.contains("line 61\n"));
        assert!(text.contains("line 100"));
        assert!(!text.contains("line 60\n"));
        assert!(!text.contains("line 1\n"));
        assert!(text.ends_with("corrected code."));
        assert_eq!(format_error_observation(&ExecutionResult::success("ok")), None);
    }

    #[test]
    fn timeout_observation_states_elapsed_time() {
        let r = ExecutionResult {
            exit_status: ExitStatus::TimedOut,
            wall_time: 2.0043,
            ..ExecutionResult::success("")
        };
        let text = format_error_observation(&r).unwrap();
        assert!(text.contains("timed out"));
        assert!(text.contains("2.00s"));
    }

    #[test]
    fn cap_keeps_tail() {
        let s = "ab".repeat(OUTPUT_CAP);
        let capped = cap_tail(&s, OUTPUT_CAP);
        assert_eq!(capped.len(), OUTPUT_CAP);
        assert!(s.ends_with(&capped));
        assert_eq!(cap_tail("é".repeat(10).as_str(), 5), "éé");
    }

    #[tokio::test]
    async fn mock_runner_by_digest() {
        let r = MockRunner::new().with("print(42)", ExecutionResult::success("42\n"));
        let out = r.run("print(42)", Duration::from_secs(5), Path::new(".")).await.unwrap();
        assert_eq!(out.stdout, "42\n");
        assert!(r.run("print(1)", Duration::from_secs(5), Path::new(".")).await.is_err());
        assert!(matches!(
            r.run("print(42)", Duration::ZERO, Path::new(".")).await,
            Err(CodeRunError::InvalidTimeout(_))
        ));
        assert!(matches!(
            r.run("print(42)", Duration::from_secs(301), Path::new(".")).await,
            Err(CodeRunError::InvalidTimeout(_))
        ));
    }

    #[tokio::test]
    async fn workdir_escape_denied() {
        let root = tempfile::tempdir().unwrap();
        let runner = ProcessRunner::new(vec!["sh".into()], root.path()).unwrap();
        for bad in ["../outside", "a/../../outside", "/etc"] {
            assert!(matches!(
                runner.run("true", Duration::from_secs(1), Path::new(bad)).await,
                Err(CodeRunError::WorkdirDenied(_))
            ));
        }
        assert!(!root.path().parent().unwrap().join("outside").exists());
    }

    #[tokio::test]
    async fn missing_interpreter() {
        let root = tempfile::tempdir().unwrap();
        let runner = ProcessRunner::new(vec!["/nonexistent/interpreter".into()], root.path()).unwrap();
        assert!(matches!(
            runner.run("x", Duration::from_secs(1), Path::new("w")).await,
            Err(CodeRunError::RunnerUnavailable(_))
        ));
    }

    #[tokio::test]
    async fn tool_maps_failures_to_execution_errors() {
        let runner = MockRunner::new()
            .with("bad", ExecutionResult::failure(1, "Traceback\nNameError: x"))
            .with("good", ExecutionResult::success("done"));
        let tool = CodeRunTool::new(Arc::new(runner), "w");
        let err = tool.call(json!({"code": "bad", "timeout_s": 60})).await.unwrap_err();
        assert_eq!(err.kind.as_str(), "ExecutionError");
        assert!(err.message.contains("NameError"));
        let ok = tool.call(json!({"code": "good", "timeout_s": 60})).await.unwrap();
        assert_eq!(ok["stdout"], "done");
        let err = tool.call(json!({"code": "good", "timeout_s": 0})).await.unwrap_err();
        assert_eq!(err.kind.as_str(), "InvalidArgument");
    }
}
