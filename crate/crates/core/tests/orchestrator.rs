use std::path::Path;

use esaa_core::clock::{parse_ts, Timestamp};
use esaa_core::contracts::{AgentOutputEnvelope, ViolationCode};
use esaa_core::event_store::{read_all, Action, Profile};
use esaa_core::orchestrator::{
    init, workspace_tree_hash, InitOptions, Orchestrator, OrchestratorError, OutcomeKind,
};
use esaa_core::projection::{RunStatus, TaskKind, TaskSeed, TaskState, VerifyStatus};
use serde_json::{json, Value};
use tempfile::TempDir;

fn at(offset_secs: i64) -> Timestamp {
    parse_ts("2026-02-18T10:00:00-03:00").unwrap() + chrono::Duration::seconds(offset_secs)
}

fn seed(id: &str, kind: TaskKind, deps: &[&str]) -> TaskSeed {
    TaskSeed {
        task_id: id.into(),
        kind,
        title: format!("task {id}"),
        depends_on: deps.iter().map(|d| d.to_string()).collect(),
        files: vec![],
        phase_id: None,
        state: None,
    }
}

fn project(tasks: Vec<TaskSeed>) -> (TempDir, Orchestrator) {
    let dir = tempfile::tempdir().unwrap();
    let orch = init(
        dir.path(),
        InitOptions::new(Profile::Full, "demo", at(0)).tasks(tasks),
    )
    .unwrap();
    (dir, orch)
}

fn three() -> Vec<TaskSeed> {
    vec![
        seed("T-1", TaskKind::Spec, &[]),
        seed("T-2", TaskKind::Impl, &["T-1"]),
        seed("T-3", TaskKind::Qa, &["T-2"]),
    ]
}

fn envelope(task: &str, n: u32, actor: &str, key: &str, proposals: Value) -> Value {
    json!({
        "schema_version": "0.3.0",
        "correlation_id": format!("cor-{task}-{n}"),
        "task_id": task,
        "attempt_id": format!("att-{task}-{n}"),
        "actor": actor,
        "action": "agent.result",
        "idempotency_key": key,
        "payload": {"summary": "done", "proposals": proposals}
    })
}

fn add_file(path: &str, line: &str) -> Value {
    json!([{"type": "file_patch", "path": path, "patch": format!("@@ -0,0 +1 @@\n+{line}\n")}])
}

fn raw(v: &Value) -> Vec<u8> {
    serde_json::to_vec(v).unwrap()
}

fn actions(root: &Path) -> Vec<String> {
    read_all(&root.join(".roadmap/activity.jsonl"))
        .unwrap()
        .into_iter()
        .map(|r| r.action)
        .collect()
}

fn finish_spec(orch: &Orchestrator) {
    orch.dispatch("T-1", "agent-spec", &at(10)).unwrap();
    let out = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-1",
                1,
                "agent-spec",
                "k-1",
                add_file(".roadmap/specs/T-1.md", "spec"),
            )),
            &at(20),
        )
        .unwrap();
    assert!(out.is_accepted(), "{out:?}");
}

#[test]
fn init_writes_one_event_and_the_project_tree() {
    let (dir, orch) = project(three());
    assert_eq!(actions(dir.path()), ["run.init"]);
    let roadmap = orch.roadmap().unwrap();
    assert_eq!(roadmap.run.status, RunStatus::Initialized);
    assert_eq!(roadmap.count_in(TaskState::Todo), 3);
    for p in [
        "AGENT_CONTRACT.yaml",
        "ORCHESTRATOR_CONTRACT.yaml",
        "schemas/agent_output.schema.json",
        "src",
        ".roadmap/qa",
    ] {
        assert!(dir.path().join(p).exists(), "{p}");
    }
    let stored = std::fs::read(dir.path().join(".roadmap/roadmap.json")).unwrap();
    assert_eq!(stored, roadmap.to_canonical().unwrap().into_bytes());

    let again = init(dir.path(), InitOptions::new(Profile::Full, "demo", at(0)));
    assert!(matches!(
        again,
        Err(OrchestratorError::AlreadyInitialized(_))
    ));
}

#[test]
fn init_simplified_with_a_catalog_starts_in_backlog() {
    let dir = tempfile::tempdir().unwrap();
    let tasks: Vec<TaskSeed> = (0..50)
        .map(|i| seed(&format!("T-{:04}", 2000 + i), TaskKind::Impl, &[]))
        .collect();
    let orch = init(
        dir.path(),
        InitOptions::new(Profile::Simplified, "big", at(0)).tasks(tasks),
    )
    .unwrap();
    assert_eq!(actions(dir.path()), ["roadmap.version"]);
    assert_eq!(orch.roadmap().unwrap().count_in(TaskState::Backlog), 50);
}

#[test]
fn bad_catalog_never_reaches_disk() {
    let dir = tempfile::tempdir().unwrap();
    let err = init(
        dir.path(),
        InitOptions::new(Profile::Full, "x", at(0)).tasks(vec![seed(
            "T-1",
            TaskKind::Impl,
            &["T-9"],
        )]),
    );
    assert!(err.is_err());
    assert!(!dir.path().join(".roadmap/activity.jsonl").exists());
}

#[test]
fn dispatch_preconditions() {
    let (dir, orch) = project(three());
    let attempt = orch.dispatch("T-1", "agent-spec", &at(10)).unwrap();
    assert_eq!(attempt.attempt_id, "att-T-1-1");
    assert_eq!(
        actions(dir.path()),
        ["run.init", "attempt.create", "orchestrator.dispatch"]
    );
    let roadmap = orch.roadmap().unwrap();
    assert_eq!(roadmap.task("T-1").unwrap().state, TaskState::InProgress);
    assert_eq!(roadmap.run.status, RunStatus::Running);

    assert!(matches!(
        orch.dispatch("T-1", "agent-other", &at(11)),
        Err(OrchestratorError::AttemptConflict { .. })
    ));
    assert!(matches!(
        orch.dispatch("T-2", "agent-impl", &at(11)),
        Err(OrchestratorError::DependencyUnsatisfied { .. })
    ));
    assert!(matches!(
        orch.dispatch("T-9", "agent-impl", &at(11)),
        Err(OrchestratorError::UnknownTask(_))
    ));
    assert!(matches!(
        orch.dispatch("T-2", "impl-bot", &at(11)),
        Err(OrchestratorError::InvalidAgent(_))
    ));

    let env = envelope(
        "T-1",
        1,
        "agent-spec",
        "k-1",
        add_file(".roadmap/specs/T-1.md", "spec"),
    );
    orch.handle_agent_output(&raw(&env), &at(20)).unwrap();
    assert!(matches!(
        orch.dispatch("T-1", "agent-spec", &at(30)),
        Err(OrchestratorError::AlreadyDone(_))
    ));
}

#[test]
fn accepted_envelope_writes_intention_effect_and_update_in_order() {
    let (dir, orch) = project(three());
    finish_spec(&orch);
    orch.dispatch("T-2", "agent-impl", &at(30)).unwrap();
    orch.handle_agent_output(
        &raw(&envelope(
            "T-2",
            1,
            "agent-impl",
            "k-2",
            add_file("src/app.js", "run()"),
        )),
        &at(40),
    )
    .unwrap();
    orch.dispatch("T-3", "agent-qa", &at(50)).unwrap();
    let out = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-3",
                1,
                "agent-qa",
                "k-3",
                add_file(".roadmap/qa/report.md", "pass"),
            )),
            &at(60),
        )
        .unwrap();
    assert_eq!(out.kind, OutcomeKind::Accepted);
    let log = read_all(&dir.path().join(".roadmap/activity.jsonl")).unwrap();
    let tail: Vec<&str> = out
        .events_appended
        .iter()
        .map(|&s| log[s as usize].action.as_str())
        .collect();
    assert_eq!(
        tail,
        ["agent.result", "orchestrator.file.write", "task.update"]
    );
    assert_eq!(
        std::fs::read_to_string(dir.path().join(".roadmap/qa/report.md")).unwrap(),
        "pass\n"
    );
    assert_eq!(out.receipts[0].bytes_written, 5);
    let file_write = &log[out.events_appended[1] as usize];
    assert_eq!(
        file_write.payload["content_sha256"],
        json!(out.receipts[0].content_hash)
    );
    assert_eq!(file_write.correlation_id.as_deref(), Some("cor-T-3-1"));
    assert!(orch.roadmap().unwrap().all_done());
}

#[test]
fn replayed_key_is_rejected_without_touching_the_workspace() {
    let (dir, orch) = project(three());
    orch.dispatch("T-1", "agent-spec", &at(10)).unwrap();
    let env = raw(&envelope(
        "T-1",
        1,
        "agent-spec",
        "k-1",
        add_file(".roadmap/specs/T-1.md", "spec"),
    ));
    orch.handle_agent_output(&env, &at(20)).unwrap();
    let before = workspace_tree_hash(dir.path()).unwrap();
    let out = orch.handle_agent_output(&env, &at(21)).unwrap();
    assert_eq!(out.kind, OutcomeKind::Rejected);
    assert_eq!(out.codes(), [ViolationCode::IdempotencyReplay]);
    assert_eq!(out.events_appended.len(), 1);
    assert!(out.receipts.is_empty());
    assert_eq!(workspace_tree_hash(dir.path()).unwrap(), before);
    assert_eq!(actions(dir.path()).last().unwrap(), "output.rejected");
}

#[test]
fn overlapping_writes_from_concurrent_attempts_conflict() {
    let (dir, orch) = project(vec![
        seed("T-A", TaskKind::Impl, &[]),
        seed("T-B", TaskKind::Impl, &[]),
    ]);
    orch.dispatch("T-A", "agent-a", &at(10)).unwrap();
    orch.dispatch("T-B", "agent-b", &at(11)).unwrap();
    let first = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-A",
                1,
                "agent-a",
                "ka",
                add_file("src/shared.js", "a"),
            )),
            &at(20),
        )
        .unwrap();
    assert!(first.is_accepted());
    let before = workspace_tree_hash(dir.path()).unwrap();
    let second = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-B",
                1,
                "agent-b",
                "kb",
                add_file("src/shared.js", "b"),
            )),
            &at(21),
        )
        .unwrap();
    assert_eq!(second.codes(), [ViolationCode::Conflict]);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("src/shared.js")).unwrap(),
        "a\n"
    );
    assert_eq!(workspace_tree_hash(dir.path()).unwrap(), before);
}

#[test]
fn rejection_codes_follow_stage_order() {
    let (dir, orch) = project(three());
    orch.dispatch("T-1", "agent-spec", &at(10)).unwrap();
    let before = workspace_tree_hash(dir.path()).unwrap();
    let cases = [
        (
            envelope(
                "T-1",
                1,
                "orchestrator",
                "k",
                add_file(".roadmap/specs/a.md", "x"),
            ),
            ViolationCode::Authority,
        ),
        (
            envelope(
                "T-1",
                1,
                "agent-intruder",
                "k",
                add_file(".roadmap/specs/a.md", "x"),
            ),
            ViolationCode::Authority,
        ),
        (
            envelope(
                "T-1",
                2,
                "agent-spec",
                "k",
                add_file(".roadmap/specs/a.md", "x"),
            ),
            ViolationCode::StaleAttempt,
        ),
        (
            envelope("T-1", 1, "agent-spec", "k", add_file("src/main.c", "x")),
            ViolationCode::BoundaryPath,
        ),
        (
            envelope(
                "T-1",
                1,
                "agent-spec",
                "k",
                add_file(".roadmap/specs/../../etc/x", "x"),
            ),
            ViolationCode::BoundaryPath,
        ),
        (json!({"schema_version": "0.3.0"}), ViolationCode::Schema),
    ];
    for (env, code) in cases {
        let out = orch.handle_agent_output(&raw(&env), &at(20)).unwrap();
        assert_eq!(out.kind, OutcomeKind::Rejected, "{env}");
        assert_eq!(out.violations[0].code, code, "{env}: {:?}", out.violations);
        assert_eq!(out.events_appended.len(), 1);
    }
    let out = orch
        .handle_agent_output(b"not json at all", &at(20))
        .unwrap();
    assert_eq!(out.codes(), [ViolationCode::Schema]);
    assert_eq!(workspace_tree_hash(dir.path()).unwrap(), before);
    // rejections consume no keys: the compliant submission with key "k" still lands
    let ok = orch.handle_agent_output(
        &raw(&envelope(
            "T-1",
            1,
            "agent-spec",
            "k",
            add_file(".roadmap/specs/a.md", "x"),
        )),
        &at(30),
    );
    assert!(ok.unwrap().is_accepted());
}

#[cfg(unix)]
#[test]
fn symlinks_cannot_carry_effects_outside_the_root() {
    let (dir, orch) = project(vec![seed("T-1", TaskKind::Impl, &[])]);
    let outside = tempfile::tempdir().unwrap();
    std::os::unix::fs::symlink(outside.path(), dir.path().join("src/link")).unwrap();
    orch.dispatch("T-1", "agent-a", &at(10)).unwrap();
    let out = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-1",
                1,
                "agent-a",
                "k",
                add_file("src/link/pwned", "x"),
            )),
            &at(20),
        )
        .unwrap();
    assert_eq!(out.codes(), [ViolationCode::BoundaryPath]);
    assert!(!outside.path().join("pwned").exists());
}

#[test]
fn issue_report_opens_a_hotfix_without_reopening_done_work() {
    let (_dir, orch) = project(three());
    finish_spec(&orch);
    let issue = |sev: &str, task: &str| -> Value {
        json!({
            "schema_version": "0.3.0",
            "correlation_id": "cor-issue-01",
            "task_id": task,
            "attempt_id": "att-issue-01",
            "actor": "agent-qa",
            "action": "issue.report",
            "idempotency_key": format!("issue-{sev}-{task}"),
            "payload": {"issue": {"title": "typo in spec", "details": "heading 2", "severity": sev}}
        })
    };
    let env: AgentOutputEnvelope = serde_json::from_value(issue("high", "T-1")).unwrap();
    let out = orch.report_issue(&env, &at(30)).unwrap();
    assert_eq!(out.hotfix_task.as_deref(), Some("T-1-HF1"));
    let roadmap = orch.roadmap().unwrap();
    let hotfix = roadmap.task("T-1-HF1").unwrap();
    assert_eq!(hotfix.kind, TaskKind::EmergencyPatch);
    assert_eq!(hotfix.depends_on, ["T-1"]);
    assert_eq!(hotfix.state, TaskState::Todo);
    assert_eq!(roadmap.task("T-1").unwrap().state, TaskState::Done);

    let bad = orch
        .handle_agent_output(&raw(&issue("catastrophic", "T-1")), &at(31))
        .unwrap();
    assert_eq!(bad.codes(), [ViolationCode::Schema]);
    assert_eq!(bad.violations[0].pointer, "/payload/issue/severity");

    let unknown: AgentOutputEnvelope = serde_json::from_value(issue("low", "T-404")).unwrap();
    assert!(matches!(
        orch.report_issue(&unknown, &at(32)),
        Err(OrchestratorError::UnknownTask(_))
    ));
}

#[test]
fn attempts_expire_strictly_after_their_ttl() {
    let (dir, orch) = project(three());
    orch.dispatch("T-1", "agent-spec", &at(0)).unwrap();
    assert!(orch.expire_attempts(&at(3600)).unwrap().is_empty());
    let expired = orch.expire_attempts(&at(3601)).unwrap();
    assert_eq!(expired.len(), 1);
    assert_eq!(expired[0].action, "attempt.timeout");
    assert_eq!(
        orch.roadmap().unwrap().task("T-1").unwrap().state,
        TaskState::Todo
    );

    let late = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-1",
                1,
                "agent-spec",
                "late",
                add_file(".roadmap/specs/T-1.md", "x"),
            )),
            &at(3700),
        )
        .unwrap();
    assert_eq!(late.codes(), [ViolationCode::StaleAttempt]);
    let log = actions(dir.path());
    let timeout_at = log.iter().position(|a| a == "attempt.timeout").unwrap();
    assert!(!log[timeout_at..]
        .iter()
        .any(|a| a == "orchestrator.file.write"));
    assert!(!dir.path().join(".roadmap/specs/T-1.md").exists());

    // a fresh attempt after the timeout succeeds
    let again = orch.dispatch("T-1", "agent-spec", &at(3800)).unwrap();
    assert_eq!(again.attempt_id, "att-T-1-2");
}

#[test]
fn expired_but_not_yet_timed_out_attempts_are_stale() {
    let (_dir, orch) = project(three());
    orch.dispatch("T-1", "agent-spec", &at(0)).unwrap();
    let out = orch
        .handle_agent_output(
            &raw(&envelope(
                "T-1",
                1,
                "agent-spec",
                "k",
                add_file(".roadmap/specs/T-1.md", "x"),
            )),
            &at(3601),
        )
        .unwrap();
    assert_eq!(out.codes(), [ViolationCode::StaleAttempt]);
}

#[test]
fn effect_failure_records_the_fact_and_fails_the_run() {
    let (dir, orch) = project(vec![seed("T-1", TaskKind::Impl, &[])]);
    let orch = orch.with_writer(|_, _| Err(std::io::Error::other("disk full")));
    orch.dispatch("T-1", "agent-a", &at(10)).unwrap();
    let err = orch.handle_agent_output(
        &raw(&envelope("T-1", 1, "agent-a", "k", add_file("src/a", "x"))),
        &at(20),
    );
    assert!(matches!(err, Err(OrchestratorError::EffectFailed { .. })));
    let log = read_all(&dir.path().join(".roadmap/activity.jsonl")).unwrap();
    let last = log.last().unwrap();
    assert_eq!(last.action, "orchestrator.file.write");
    assert_eq!(last.payload["ok"], json!(false));
    assert_eq!(log[log.len() - 2].action, "agent.result");
    let roadmap = orch.roadmap().unwrap();
    assert_eq!(roadmap.run.status, RunStatus::Failed);
    let stored: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join(".roadmap/roadmap.json")).unwrap())
            .unwrap();
    assert_eq!(stored["run"]["status"], "failed");
}

#[test]
fn end_run_requires_verification_and_reflects_outcome() {
    let (_dir, orch) = project(three());
    finish_spec(&orch);
    assert!(matches!(
        orch.end_run(&at(100)),
        Err(OrchestratorError::VerifyRequired)
    ));
    let report = orch.verify(&at(100)).unwrap();
    assert_eq!(report.verify_status, VerifyStatus::Ok);
    assert_eq!(report.events_appended.len(), 2);
    let end = orch.end_run(&at(101)).unwrap();
    assert_eq!(end.payload["status"], "failed");
    assert_eq!(orch.roadmap().unwrap().run.status, RunStatus::Failed);
    // closed runs verify read-only
    let again = orch.verify(&at(102)).unwrap();
    assert!(again.is_ok());
    assert!(again.events_appended.is_empty());
}

#[test]
fn verify_classifies_tampering() {
    let (dir, orch) = project(three());
    finish_spec(&orch);
    assert!(orch.verify(&at(100)).unwrap().is_ok());
    assert!(
        orch.verify(&at(101)).unwrap().is_ok(),
        "re-verification stays ok"
    );

    let roadmap_path = dir.path().join(".roadmap/roadmap.json");
    let mut doc: Value = serde_json::from_slice(&std::fs::read(&roadmap_path).unwrap()).unwrap();
    let hash = doc["run"]["projection_hash_sha256"]
        .as_str()
        .unwrap()
        .to_owned();
    let flipped = format!(
        "{}{}",
        &hash[..63],
        if hash.ends_with('0') { '1' } else { '0' }
    );
    doc["run"]["projection_hash_sha256"] = json!(flipped);
    std::fs::write(&roadmap_path, serde_json::to_vec(&doc).unwrap()).unwrap();
    let report = orch.verify(&at(102)).unwrap();
    assert_eq!(report.verify_status, VerifyStatus::Mismatch);
    let stored: Value = serde_json::from_slice(&std::fs::read(&roadmap_path).unwrap()).unwrap();
    assert_eq!(stored["run"]["verify_status"], "mismatch");
    assert_eq!(stored["run"]["projection_hash_sha256"], json!(flipped));

    let log_path = dir.path().join(".roadmap/activity.jsonl");
    let text = std::fs::read_to_string(&log_path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(2);
    std::fs::write(&log_path, lines.join("\n") + "\n").unwrap();
    let report = orch.verify(&at(103)).unwrap();
    assert_eq!(report.verify_status, VerifyStatus::Corrupted);
    assert_eq!(report.corruption.unwrap().kind.to_string(), "sequence-gap");
}

#[test]
fn simplified_operations_reject_full_profile_calls() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = seed("T-1", TaskKind::Impl, &[]);
    a.phase_id = Some("PH-1".into());
    let orch = init(
        dir.path(),
        InitOptions::new(Profile::Simplified, "s", at(0)).tasks(vec![a]),
    )
    .unwrap();
    assert!(matches!(
        orch.dispatch("T-1", "agent-a", &at(1)),
        Err(OrchestratorError::WrongProfile { .. })
    ));
    orch.promote("T-1", &at(1)).unwrap();
    orch.claim("T-1", "codex", &at(2)).unwrap();
    orch.complete("T-1", "codex", [("works".to_string(), true)].into(), &at(3))
        .unwrap();
    orch.phase_complete("PH-1", &at(4)).unwrap();
    let roadmap = orch.roadmap().unwrap();
    assert_eq!(roadmap.run.status, RunStatus::Success);
    assert!(matches!(
        orch.promote("T-1", &at(5)),
        Err(OrchestratorError::Projection(_))
    ));
    assert_eq!(
        actions(dir.path()),
        [
            "roadmap.version",
            "promote",
            "claim",
            "complete",
            "phase.complete"
        ]
    );
    let report = orch.verify(&at(6)).unwrap();
    assert!(report.is_ok());
    assert!(
        report.events_appended.is_empty(),
        "simplified verify is read-only"
    );
    assert!(!actions(dir.path()).contains(&Action::VerifyStart.as_str().to_owned()));
}
