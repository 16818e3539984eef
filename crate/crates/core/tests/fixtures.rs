//! Golden fixtures. Regenerate with `ESAA_BLESS=1 cargo test --test fixtures -- --test-threads=1`.

use std::fs;
use std::path::{Path, PathBuf};

use esaa_core::event_store::{encode_record, ingest_lines, read_all, tail_verify_counts, Profile};
use esaa_core::projection::{project, TaskState};
use esaa_core::sim::{cs2_records, run_scenario, write_fixture, Cs2Variant, ScenarioConfig};
use esaa_core::verify::{replay_to, verify_bytes};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn blessing() -> bool {
    std::env::var_os("ESAA_BLESS").is_some()
}

fn check_tree(expected_root: &Path, fixture: &str) {
    let fixture_root = repo().join("fixtures").join(fixture).join(".roadmap");
    for name in ["activity.jsonl", "roadmap.json"] {
        let got = fs::read(expected_root.join(".roadmap").join(name)).unwrap();
        let path = fixture_root.join(name);
        if blessing() {
            fs::create_dir_all(&fixture_root).unwrap();
            fs::write(&path, &got).unwrap();
        }
        let want = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(
            got == want,
            "{} differs from the builder output",
            path.display()
        );
    }
}

#[test]
fn cs1_fixture_is_the_cs1_scenario_log() {
    let cfg = ScenarioConfig::load(&repo().join("scenarios/cs1.yaml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&cfg, dir.path()).unwrap();
    check_tree(dir.path(), "cs1");
}

#[test]
fn cs2_fixtures_match_the_timeline_builder() {
    for (variant, name) in [
        (Cs2Variant::ThirtyOne, "cs2"),
        (Cs2Variant::Thirty, "cs2-30"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &cs2_records(variant)).unwrap();
        check_tree(dir.path(), name);
    }
}

fn fixture_log(name: &str) -> PathBuf {
    repo()
        .join("fixtures")
        .join(name)
        .join(".roadmap/activity.jsonl")
}

#[test]
fn cs2_fixture_states() {
    let records = read_all(&fixture_log("cs2")).unwrap();
    assert_eq!(records.len(), 86);
    let rm = project(&records).unwrap();
    assert_eq!(
        (
            rm.count_in(TaskState::Done),
            rm.count_in(TaskState::Ready),
            rm.count_in(TaskState::Backlog)
        ),
        (31, 2, 17)
    );
    assert_eq!(rm.indexes.completed_phases.len(), 8);
    assert_eq!(rm.phases().len(), 15);

    let counts = tail_verify_counts(&read_all(&fixture_log("cs2-30")).unwrap());
    let want = [
        ("claim", 30),
        ("complete", 30),
        ("promote", 17),
        ("phase.complete", 8),
        ("roadmap.version", 1),
    ];
    assert_eq!(
        counts,
        want.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    );
}

#[test]
fn fixtures_verify_ok() {
    for name in ["cs1", "cs2", "cs2-30"] {
        let root = repo().join("fixtures").join(name).join(".roadmap");
        let log = fs::read(root.join("activity.jsonl")).unwrap();
        let stored = fs::read(root.join("roadmap.json")).unwrap();
        assert!(verify_bytes(&log, &stored).is_ok(), "{name}");
    }
}

#[test]
fn extract_matches_the_burst_window() {
    let text = fs::read_to_string(repo().join("fixtures/burst_extract.jsonl")).unwrap();
    let extract = ingest_lines(&text, Profile::Simplified, 57).unwrap();
    assert_eq!(extract.len(), 7);
    let records = read_all(&fixture_log("cs2")).unwrap();
    for (ex, rec) in extract.iter().zip(&records[57..64]) {
        assert_eq!(ex.event_seq, rec.event_seq);
        assert_eq!(ex.action, rec.action);
        assert_eq!(ex.task_id, rec.task_id);
        assert_eq!(ex.agent_id, rec.agent_id);
        assert_eq!(ex.acceptance_results, rec.acceptance_results);
        assert_eq!(ex.ts, rec.ts[..19], "local wall time");
    }
    // Six claims fall in minute 21:55.
    let in_minute = records
        .iter()
        .filter(|r| r.action == "claim" && r.ts.starts_with("2026-02-19T21:55"))
        .count();
    assert_eq!(in_minute, 6);
}

#[test]
fn replay_before_the_first_completion_shows_five_open_claims() {
    let at = replay_to(&fixture_log("cs2"), 61).unwrap();
    for id in ["T-2301", "T-2302", "T-2303", "T-2401", "T-2403"] {
        let t = at.task(id).unwrap();
        assert_eq!(t.claimed_by.as_deref(), Some("claude-opus-4-6"));
        assert_eq!(t.state, TaskState::Ready);
    }
    let later = replay_to(&fixture_log("cs2"), 63).unwrap();
    assert_eq!(later.task("T-2302").unwrap().state, TaskState::Done);
}

#[test]
fn cs2_log_size_is_near_fifteen_kilobytes() {
    let bytes: usize = cs2_records(Cs2Variant::ThirtyOne)
        .iter()
        .map(|r| encode_record(r).unwrap().len())
        .sum();
    assert!((7_500..=22_500).contains(&bytes), "{bytes} bytes");
}

/// Digests recomputed outside this crate: Python's `json.dumps` with sorted
/// keys, compact separators and `ensure_ascii=False`, plus LF, over the
/// roadmap without its `run` block, fed to `hashlib.sha256`.
#[test]
fn fixture_digests_match_an_independent_recomputation() {
    for (name, want) in [
        (
            "cs1",
            "a399b40025fac4810afbc4a1e759b0d2173f4738dbf3a998331ddc7307c44f87",
        ),
        (
            "cs2",
            "3c66fc5f4e3fa7b1f029c16f3b1ae3376257034f1affea04c4a4f97a8bfd7852",
        ),
        (
            "cs2-30",
            "319f665de44b133def64f0ef8873ee655b86e09c918357f171276b09eea581bd",
        ),
    ] {
        let rm = project(&read_all(&fixture_log(name)).unwrap()).unwrap();
        assert_eq!(
            rm.run.projection_hash_sha256.unwrap().as_str(),
            want,
            "{name}"
        );
    }
}
