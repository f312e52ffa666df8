//! Process-backed runner, driven through `sh` so the tests do not depend on a
//! Python install.

use std::path::Path;
use std::time::{Duration, Instant};

use agentkit_core::ext::coderun::{format_error_observation, CodeRunError, CodeRunner, ExitStatus, ProcessRunner};

fn runner(root: &Path) -> ProcessRunner {
    ProcessRunner::new(vec!["sh".into()], root).unwrap()
}

#[tokio::test]
async fn infinite_loop_is_killed_at_deadline() {
    let root = tempfile::tempdir().unwrap();
    let r = runner(root.path());
    let started = Instant::now();
    let out = r
        .run("while true; do :; done", Duration::from_secs(2), Path::new("loop"))
        .await
        .unwrap();
    assert_eq!(out.exit_status, ExitStatus::TimedOut);
    assert!(out.wall_time >= 2.0, "{}", out.wall_time);
    assert!(started.elapsed() < Duration::from_secs(10));
    let text = format_error_observation(&out).unwrap();
    assert!(text.contains("timed out"), "{text}");
}

#[tokio::test]
async fn background_children_die_with_the_run() {
    let root = tempfile::tempdir().unwrap();
    let r = runner(root.path());
    let started = Instant::now();
    let out = r
        .run("sleep 30 &\nsleep 30\n", Duration::from_secs(1), Path::new("bg"))
        .await
        .unwrap();
    assert_eq!(out.exit_status, ExitStatus::TimedOut);
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[tokio::test]
async fn new_files_are_reported_as_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let r = runner(root.path());
    std::fs::create_dir_all(root.path().join("plot")).unwrap();
    std::fs::write(root.path().join("plot/old.txt"), "kept").unwrap();
    let src = "printf '\\211PNG....' > out.png\nmkdir -p sub\necho hi > sub/log.txt\necho done\n";
    let out = r.run(src, Duration::from_secs(5), Path::new("plot")).await.unwrap();
    assert!(out.exit_status.success());
    assert_eq!(out.stdout, "done\n");
    let mut names: Vec<_> = out.artifacts.iter().map(|a| (a.path.as_str(), a.media_type.as_str())).collect();
    names.sort();
    assert_eq!(names, vec![("out.png", "image/png"), ("sub/log.txt", "text/plain")]);
    let png = out.artifacts.iter().find(|a| a.path == "out.png").unwrap();
    assert_eq!(png.bytes, 8);
}

#[tokio::test]
async fn runs_do_not_share_environment_or_workdirs() {
    let root = tempfile::tempdir().unwrap();
    let r = runner(root.path());
    let first = r
        .run("export LEAK=1\necho $LEAK > mine.txt\necho $LEAK", Duration::from_secs(5), Path::new("a"))
        .await
        .unwrap();
    assert_eq!(first.stdout, "1\n");
    let second = r
        .run("echo \"[$LEAK]\"\nls", Duration::from_secs(5), Path::new("b"))
        .await
        .unwrap();
    assert_eq!(second.stdout, "[]\n");

    // Parent variables outside the allowlist are not inherited.
    let third = r.run("echo \"[$CARGO_PKG_NAME]\"", Duration::from_secs(5), Path::new("b")).await.unwrap();
    assert_eq!(third.stdout, "[]\n");
    let home = r.run("echo $HOME", Duration::from_secs(5), Path::new("b")).await.unwrap();
    assert_eq!(home.stdout.trim(), root.path().canonicalize().unwrap().join("b").to_str().unwrap());
}

#[tokio::test]
async fn failing_script_reports_stderr_tail() {
    let root = tempfile::tempdir().unwrap();
    let r = runner(root.path());
    let src = "i=0\nwhile [ $i -lt 100 ]; do echo line$i >&2; i=$((i+1)); done\nexit 3\n";
    let out = r.run(src, Duration::from_secs(5), Path::new("fail")).await.unwrap();
    assert_eq!(out.exit_status, ExitStatus::Exited { code: 3 });
    let text = format_error_observation(&out).unwrap();
    assert!(text.contains("line99"));
    assert!(text.contains("line60"));
    assert!(!text.contains("line59\n"));
}

#[tokio::test]
async fn symlink_out_of_root_is_denied() {
    let root = tempfile::tempdir().unwrap();
    let outside = tempfile::tempdir().unwrap();
    let r = runner(root.path());
    std::os::unix::fs::symlink(outside.path(), root.path().join("link")).unwrap();
    assert!(matches!(
        r.run("touch x", Duration::from_secs(5), Path::new("link")).await,
        Err(CodeRunError::WorkdirDenied(_))
    ));
    assert!(!outside.path().join("x").exists());
}
