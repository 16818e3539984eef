//! Command behaviour and exit codes. Golden outputs live in `tests/golden/`;
//! regenerate them with `ESAA_BLESS=1 cargo test -p esaa-cli --test cli`.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{dispatch, envelope, esaa, fixture_copy, init_full, repo, seed};
use esaa_core::event_store::read_all;
use esaa_core::projection::project;
use serde_json::json;

const AT: &str = "2026-03-01T08:00:00-03:00";

fn golden(name: &str, got: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("ESAA_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, got).unwrap();
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(got, want, "{name}");
}

fn events(root: &Path) -> Vec<String> {
    read_all(&root.join(".roadmap/activity.jsonl"))
        .unwrap()
        .into_iter()
        .map(|r| r.action)
        .collect()
}

#[test]
fn init_full_writes_one_event() {
    let dir = tempfile::tempdir().unwrap();
    let run = esaa(dir.path(), &["--at", AT, "init", "--name", "desk"], None);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(events(dir.path()), ["run.init"]);
    let status = esaa(dir.path(), &["--format", "json", "status"], None).json();
    assert_eq!(status["run_status"], "initialized");
    assert_eq!(status["last_event_seq"], 0);
    assert!(dir.path().join("AGENT_CONTRACT.yaml").exists());

    let again = esaa(dir.path(), &["--at", AT, "init", "--name", "desk"], None);
    assert_eq!(again.code, 1);
    assert!(
        again.stderr.contains("already initialized"),
        "{}",
        again.stderr
    );
}

#[test]
fn init_simplified_catalog_starts_in_backlog() {
    let dir = tempfile::tempdir().unwrap();
    let tasks: Vec<_> = (0..50)
        .map(|i| seed(&format!("T-{}", 4000 + i), "impl"))
        .collect();
    let catalog = dir.path().join("catalog.json");
    fs::write(&catalog, serde_json::to_vec(&tasks).unwrap()).unwrap();
    let args = [
        "--profile",
        "simplified",
        "--at",
        AT,
        "init",
        "--name",
        "fifty",
        "--catalog",
        catalog.to_str().unwrap(),
    ];
    assert_eq!(esaa(dir.path(), &args, None).code, 0);
    assert_eq!(events(dir.path()), ["roadmap.version"]);
    let status = esaa(dir.path(), &["--format", "json", "status"], None).json();
    assert_eq!(
        status["state_index"],
        json!({"backlog": 50, "done": 0, "ready": 0})
    );
}

#[test]
fn init_builtin_cs2_seeds_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        esaa(dir.path(), &["--at", AT, "init", "--builtin", "cs2"], None).code,
        0
    );
    let status = esaa(dir.path(), &["--format", "json", "status"], None).json();
    assert_eq!(status["profile"], "simplified");
    assert_eq!(status["project"], "clinic-asr");
    assert_eq!(
        status["state_index"],
        json!({"backlog": 34, "done": 0, "ready": 16})
    );
    assert_eq!(status["phases_total"], 15);
}

#[test]
fn submit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let before_init = esaa(root, &["submit", "-"], Some(b"{}"));
    assert_eq!(before_init.code, 1);
    assert!(
        before_init.stderr.contains("init"),
        "{}",
        before_init.stderr
    );

    init_full(root, AT, &[seed("T-1", "impl"), seed("T-2", "impl")]);
    let attempt = dispatch(root, AT, "T-1", "agent-one");
    let ok = esaa(
        root,
        &["--at", AT, "--format", "json", "submit", "-"],
        Some(&envelope(&attempt, "src/one.txt")),
    );
    assert_eq!(ok.code, 0, "{}", ok.stdout);
    assert_eq!(ok.json()["kind"], "accepted");
    assert_eq!(
        fs::read_to_string(root.join("src/one.txt")).unwrap(),
        "written\n"
    );

    let attempt = dispatch(root, AT, "T-2", "agent-two");
    let mut bad: serde_json::Value =
        serde_json::from_slice(&envelope(&attempt, "src/two.txt")).unwrap();
    bad["confidence"] = json!("high");
    let file = root.join("bad.json");
    fs::write(&file, serde_json::to_vec(&bad).unwrap()).unwrap();
    let rejected = esaa(root, &["--at", AT, "submit", file.to_str().unwrap()], None);
    assert_eq!(rejected.code, 4, "{}", rejected.stdout);
    assert!(
        rejected.stdout.starts_with("rejected"),
        "{}",
        rejected.stdout
    );
    assert!(rejected.stdout.contains("[schema]"), "{}", rejected.stdout);
    assert_eq!(events(root).last().unwrap(), "output.rejected");
    assert!(!root.join("src/two.txt").exists());
}

#[test]
fn dispatch_refuses_non_agent_identities() {
    let dir = tempfile::tempdir().unwrap();
    init_full(dir.path(), AT, &[seed("T-1", "impl")]);
    let run = esaa(
        dir.path(),
        &["--at", AT, "dispatch", "T-1", "orchestrator"],
        None,
    );
    assert_eq!(run.code, 1);
    assert_eq!(events(dir.path()), ["run.init"]);
}

#[test]
fn status_and_log_on_the_cs2_fixture() {
    let root = repo().join("fixtures/cs2");
    let text = esaa(&root, &["status"], None);
    assert_eq!(text.stdout, "done 31 / ready 2 / backlog 17; phases 8/15\n");
    golden(
        "cs2_status.json",
        &esaa(&root, &["--format", "json", "status"], None).stdout,
    );

    let claims = esaa(
        &root,
        &["log", "--agent", "claude-opus-4-6", "--action", "claim"],
        None,
    );
    assert_eq!(claims.code, 0);
    assert_eq!(claims.stdout.lines().count(), 5);
    golden("cs2_opus_claims.txt", &claims.stdout);

    let by_task = esaa(
        &root,
        &["--format", "json", "log", "--task", "T-2302"],
        None,
    );
    let lines: Vec<serde_json::Value> = by_task
        .stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let actions: Vec<&str> = lines
        .iter()
        .map(|l| l["action"].as_str().unwrap())
        .collect();
    assert_eq!(actions, ["claim", "complete"]);
}

#[test]
fn replay_prints_the_projection_at_a_seq() {
    let root = repo().join("fixtures/cs2");
    let records = read_all(&root.join(".roadmap/activity.jsonl")).unwrap();
    let zero = esaa(&root, &["replay", "0"], None);
    assert_eq!(zero.code, 0);
    assert_eq!(
        zero.stdout.as_bytes(),
        project(&records[..1])
            .unwrap()
            .to_canonical()
            .unwrap()
            .as_bytes()
    );

    let last = esaa(&root, &["replay", "85"], None);
    assert_eq!(
        last.stdout.as_bytes(),
        fs::read(root.join(".roadmap/roadmap.json")).unwrap()
    );

    let beyond = esaa(&root, &["replay", "86"], None);
    assert_eq!(beyond.code, 1);
    assert!(beyond.stdout.is_empty());
    assert!(beyond.stderr.contains("out of range"), "{}", beyond.stderr);
}

#[test]
fn verify_exit_codes() {
    let dir = fixture_copy("cs2");
    let ok = esaa(dir.path(), &["--format", "json", "verify"], None);
    assert_eq!(ok.code, 0);
    golden("cs2_verify.json", &ok.stdout);

    let roadmap = dir.path().join(".roadmap/roadmap.json");
    let text = fs::read_to_string(&roadmap)
        .unwrap()
        .replace("Rules documented", "Rules documenteD");
    fs::write(&roadmap, text).unwrap();
    let mismatch = esaa(dir.path(), &["verify"], None);
    assert_eq!(mismatch.code, 2, "{}", mismatch.stdout);
    assert!(
        mismatch.stdout.starts_with("mismatch"),
        "{}",
        mismatch.stdout
    );
    assert!(
        mismatch.stdout.contains("task T-2301"),
        "{}",
        mismatch.stdout
    );

    let dir = fixture_copy("cs2");
    let log = dir.path().join(".roadmap/activity.jsonl");
    let mut bytes = fs::read(&log).unwrap();
    let second_line = bytes.iter().position(|b| *b == b'\n').unwrap() + 1;
    bytes[second_line] = b'#';
    fs::write(&log, bytes).unwrap();
    let corrupted = esaa(dir.path(), &["--format", "json", "verify"], None);
    assert_eq!(corrupted.code, 3, "{}", corrupted.stdout);
    assert_eq!(corrupted.json()["verify_status"], "corrupted");
    assert_eq!(esaa(dir.path(), &["status"], None).code, 3);
}

#[test]
fn run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo().join("scenarios/adversarial.yaml");
    let run = esaa(dir.path(), &["run", scenario.to_str().unwrap()], None);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.starts_with("adversarial: "), "{}", run.stdout);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("reports/adversarial.json")).unwrap())
            .unwrap();
    assert_eq!(report["rejected_count"], report["submissions"]);

    let again = esaa(dir.path(), &["run", scenario.to_str().unwrap()], None);
    assert_eq!(again.code, 1, "a second run needs a fresh root");
}

#[test]
fn global_options() {
    let root = repo().join("fixtures/cs2");
    let via_env = Command::new(env!("CARGO_BIN_EXE_esaa"))
        .arg("status")
        .env("ESAA_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(
        String::from_utf8(via_env.stdout).unwrap(),
        "done 31 / ready 2 / backlog 17; phases 8/15\n"
    );

    let wrong = esaa(&root, &["--profile", "full", "status"], None);
    assert_eq!(wrong.code, 1);
    assert!(wrong.stderr.contains("simplified"), "{}", wrong.stderr);

    assert_eq!(esaa(&root, &["frobnicate"], None).code, 1);
    assert_eq!(esaa(&root, &["--help"], None).code, 0);
    assert_eq!(esaa(&root, &["--at", "yesterday", "verify"], None).code, 1);
}
