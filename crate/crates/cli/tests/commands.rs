use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use agentkit_core::index::load_artifact;
use agentkit_core::{hash_embed, HashEmbedder};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

fn agentkit() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agentkit"));
    for (k, _) in std::env::vars() {
        if k.starts_with("AGENTKIT_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    agentkit().args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn ingest(out: &Path, extra: &[&str]) -> Output {
    let manifest = fixtures().join("manifest.yaml");
    let mut args = vec!["ingest", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    for sub in ["ingest", "query", "serve", "chat", "microscope-sim"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(text(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["serve", "--port", "99999"]).status.code(), Some(2));
    let out = run(&["ingest", "--out", "x.kb"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("manifest"));
}

#[test]
fn ingest_is_deterministic_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.kb");
    let b = dir.path().join("b.kb");
    let out_a = ingest(&a, &["--chunk-size", "400", "--overlap", "50"]);
    assert_eq!(out_a.status.code(), Some(0), "{}", text(&out_a.stderr));
    let out_b = ingest(&b, &["--chunk-size", "400", "--overlap", "50"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let stdout = text(&out_a.stdout);
    let digest = |s: &str| s.lines().find(|l| l.starts_with("digest ")).map(String::from);
    assert!(digest(&stdout).is_some());
    assert_eq!(digest(&stdout), digest(&text(&out_b.stdout)));

    let kb = load_artifact(&a).unwrap();
    for id in ["cellpose", "model-zoo", "imagej"] {
        let n = kb.chunks().iter().filter(|c| c.source_id == id).count();
        assert!(n >= 2, "{id} has {n} chunks");
        assert!(stdout.contains(&format!("{id}\t{n} chunks")), "{stdout}");
    }
    assert_eq!(kb.dim(), HashEmbedder::DEFAULT_DIM);
    // Markup and scripts do not survive normalization.
    assert!(kb.chunks().iter().all(|c| !c.text.contains("<p>") && !c.text.contains("analytics")));
}

#[test]
fn ingest_rejects_bad_policy_and_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ingest(&dir.path().join("x.kb"), &["--chunk-size", "100", "--overlap", "100"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("x.kb").exists());
    let out = run(&["ingest", "--manifest", "/nonexistent/m.yaml", "--out", "/tmp/never.kb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("cannot read manifest"));
}

#[test]
fn query_matches_brute_force_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kb.kb");
    assert_eq!(ingest(&path, &["--chunk-size", "400", "--overlap", "50"]).status.code(), Some(0));
    let question = "flow threshold for ragged cell masks";
    let out = run(&["query", "--kb", path.to_str().unwrap(), "--query", question, "--k", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let rows: Vec<Vec<String>> = text(&out.stdout)
        .lines()
        .map(|l| l.split('\t').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 4);

    // Independent ranking: dot products over the stored vectors, ties by id.
    let kb = load_artifact(&path).unwrap();
    let q = hash_embed(question, kb.dim());
    let mut scored: Vec<(f32, String)> = kb
        .chunks()
        .iter()
        .map(|c| {
            let v = kb.vector(&c.chunk_id).unwrap();
            (v.iter().zip(q.values()).map(|(a, b)| a * b).sum(), c.chunk_id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 4, "{row:?}");
        assert_eq!(row[0], (i + 1).to_string());
        assert_eq!(row[2], scored[i].1);
        let score: f32 = row[1].parse().unwrap();
        assert!((score - scored[i].0).abs() < 1e-5, "{score} vs {}", scored[i].0);
        assert!(row[3].chars().count() <= 80 && !row[3].contains('\n'));
    }
    assert!(rows[0][2].starts_with("cellpose:"), "{rows:?}");
}

#[test]
fn query_names_artifact_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kb.kb");
    assert_eq!(ingest(&path, &[]).status.code(), Some(0));
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let out = run(&["query", "--kb", path.to_str().unwrap(), "--query", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("digest mismatch"), "{}", text(&out.stderr));

    std::fs::write(&path, b"NOPE").unwrap();
    let out = run(&["query", "--kb", path.to_str().unwrap(), "--query", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("bad magic"));
}

#[test]
fn config_file_supplies_values_relative_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ingest(&dir.path().join("kb.kb"), &[]).status.code(), Some(0));
    let cfg = dir.path().join("agentkit.toml");
    std::fs::write(&cfg, "[query]\nkb = \"kb.kb\"\nk = 2\n").unwrap();
    let out = agentkit()
        .current_dir("/")
        .args(["--config", cfg.to_str().unwrap(), "-v", "query", "--query", "Fiji macros"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 2);
    let stderr = text(&out.stderr);
    assert!(stderr.contains("k = 2 (config query.k)"), "{stderr}");
    assert!(stderr.contains("query = Fiji macros (flag)"), "{stderr}");

    // The environment beats the file.
    let out = agentkit()
        .env("AGENTKIT_K", "1")
        .args(["--config", cfg.to_str().unwrap(), "query", "--query", "Fiji"])
        .output()
        .unwrap();
    assert_eq!(text(&out.stdout).lines().count(), 1);

    std::fs::write(&cfg, "[query\n").unwrap();
    let out = agentkit().args(["--config", cfg.to_str().unwrap(), "query", "--query", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chat_fails_fast_when_gateway_is_down() {
    // Reserve a port and release it so nothing is listening there.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let started = Instant::now();
    let out = run(&["chat", "--gateway", &format!("http://127.0.0.1:{port}"), "--message", "hi"]);
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("unreachable"), "{}", text(&out.stderr));
    // Non-routable address: the connect timeout bounds the wait.
    let started = Instant::now();
    let out = run(&["chat", "--gateway", "http://10.255.255.1:9", "--message", "hi"]);
    assert!(started.elapsed() < Duration::from_secs(5), "{:?}", started.elapsed());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_reports_busy_port() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("a.json");
    std::fs::write(&script, r#"[{"type": "final", "text": "hi"}]"#).unwrap();
    let out = run(&["serve", "--port", &port, "--assistant", script.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("cannot listen"), "{}", text(&out.stderr));
}

#[test]
fn serve_rejects_bad_assistant_file() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("a.json");
    std::fs::write(&script, r#"{"max_iterations": 0, "script": []}"#).unwrap();
    let out = run(&["serve", "--port", "0", "--assistant", script.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("max_iterations"));
}
