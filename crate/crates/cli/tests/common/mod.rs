#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::{json, Value};

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

/// Run the `esaa` binary against `root`, optionally feeding `stdin`.
pub fn esaa(root: &Path, args: &[&str], stdin: Option<&[u8]>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_esaa"));
    cmd.arg("--root")
        .arg(root)
        .args(args)
        .env_remove("ESAA_ROOT");
    cmd.stdin(if stdin.is_some() {
        Stdio::piped()
    } else {
        Stdio::null()
    });
    cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("spawn esaa");
    if let Some(bytes) = stdin {
        // The process may exit before reading, e.g. when the root is not initialized.
        let _ = child.stdin.take().unwrap().write_all(bytes);
    }
    let out = child.wait_with_output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Copy a fixture's `.roadmap/` into a fresh directory.
pub fn fixture_copy(name: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = repo().join("fixtures").join(name).join(".roadmap");
    std::fs::create_dir_all(dir.path().join(".roadmap")).unwrap();
    for f in ["activity.jsonl", "roadmap.json"] {
        std::fs::copy(src.join(f), dir.path().join(".roadmap").join(f)).unwrap();
    }
    dir
}

pub fn seed(task_id: &str, kind: &str) -> Value {
    json!({"task_id": task_id, "kind": kind, "title": format!("{kind} work {task_id}")})
}

/// `init` a full-profile project at `root` from an inline catalog.
pub fn init_full(root: &Path, at: &str, tasks: &[Value]) {
    let catalog = root.join("catalog.json");
    std::fs::write(&catalog, serde_json::to_vec(tasks).unwrap()).unwrap();
    let run = esaa(
        root,
        &[
            "--at",
            at,
            "init",
            "--name",
            "probe",
            "--catalog",
            catalog.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    std::fs::remove_file(catalog).unwrap();
}

/// Dispatch through the CLI and return the attempt document.
pub fn dispatch(root: &Path, at: &str, task: &str, agent: &str) -> Value {
    let run = esaa(
        root,
        &["--format", "json", "--at", at, "dispatch", task, agent],
        None,
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    run.json()
}

/// A single-file `agent.result` envelope answering `attempt`.
pub fn envelope(attempt: &Value, path: &str) -> Vec<u8> {
    let agent = attempt["agent"].as_str().unwrap();
    let attempt_id = attempt["attempt_id"].as_str().unwrap();
    let doc = json!({
        "schema_version": "0.3.0",
        "correlation_id": attempt["correlation_id"],
        "task_id": attempt["task_id"],
        "attempt_id": attempt_id,
        "actor": agent,
        "action": "agent.result",
        "idempotency_key": format!("{agent}-{attempt_id}"),
        "payload": {
            "summary": "done",
            "proposals": [{"type": "file_patch", "path": path, "patch": "@@ -0,0 +1 @@\n+written\n"}],
        },
    });
    serde_json::to_vec(&doc).unwrap()
}
