//! Replay verification and time travel.
//!
//! The log is replayed from event zero, the projection digest recomputed and
//! compared with the digest stored in `roadmap.json`. The stored document must
//! also hash to its own recorded digest, so editing `roadmap.json` without
//! touching the log is caught as well.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{compute_projection_hash, HashDigest};
use crate::clock::{format_ts, Timestamp};
use crate::event_store::{
    parse_log, Action, AppendPermit, CorruptionKind, CorruptionReport, EventRecord, NewEvent,
    Profile, StoreError,
};
use crate::projection::{
    apply_event, diff_projections, project, Roadmap, RunStatus, TaskDiff, VerifyStatus,
};

/// Where the stored read-model first departs from the replayed one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub section: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskDiff>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub verify_status: VerifyStatus,
    pub computed_hash: Option<HashDigest>,
    pub stored_hash: Option<HashDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_divergence: Option<Divergence>,
    pub event_count: u64,
    /// Sequence numbers of the verify events this run appended, if any.
    pub events_appended: Vec<u64>,
}

impl VerifyReport {
    fn corrupted(corruption: CorruptionReport, event_count: u64) -> Self {
        VerifyReport {
            verify_status: VerifyStatus::Corrupted,
            computed_hash: None,
            stored_hash: None,
            corruption: Some(corruption),
            first_divergence: None,
            event_count,
            events_appended: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.verify_status == VerifyStatus::Ok
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("log is corrupted: {0}")]
    Corrupted(CorruptionReport),
    #[error("event_seq {seq} is out of range (log ends at {max})")]
    SeqOutOfRange { seq: u64, max: u64 },
}

fn read(path: &Path) -> Result<Vec<u8>, VerifyError> {
    std::fs::read(path).map_err(|source| VerifyError::Io {
        path: path.to_owned(),
        source,
    })
}

fn mismatch(
    computed: HashDigest,
    stored: Option<HashDigest>,
    count: u64,
    d: Divergence,
) -> VerifyReport {
    VerifyReport {
        verify_status: VerifyStatus::Mismatch,
        computed_hash: Some(computed),
        stored_hash: stored,
        corruption: None,
        first_divergence: Some(d),
        event_count: count,
        events_appended: Vec::new(),
    }
}

fn divergence(section: &str, detail: impl Into<String>) -> Divergence {
    Divergence {
        section: section.into(),
        task: None,
        detail: detail.into(),
    }
}

/// Compare a validated log with stored `roadmap.json` bytes. Also returns the
/// replayed projection when the fold succeeded.
pub fn check_records(records: &[EventRecord], stored: &[u8]) -> (VerifyReport, Option<Roadmap>) {
    let count = records.len() as u64;
    let computed = match project(records) {
        Ok(r) => r,
        Err(e) => {
            let line = e.event_seq().map_or(0, |s| s as usize + 1);
            let report =
                CorruptionReport::new(line, CorruptionKind::ProjectionFailure, e.to_string());
            return (VerifyReport::corrupted(report, count), None);
        }
    };
    let computed_hash = computed
        .run
        .projection_hash_sha256
        .clone()
        .expect("project seals the roadmap");
    let doc: Value = match serde_json::from_slice(stored) {
        Ok(v) => v,
        Err(e) => {
            let d = divergence("roadmap", format!("stored roadmap is not valid JSON: {e}"));
            return (mismatch(computed_hash, None, count, d), Some(computed));
        }
    };
    let stored_hash = doc
        .pointer("/run/projection_hash_sha256")
        .and_then(Value::as_str)
        .and_then(|s| HashDigest::parse(s).ok());
    let Some(stored_hash) = stored_hash else {
        let d = divergence("run", "stored roadmap has no valid projection_hash_sha256");
        return (mismatch(computed_hash, None, count, d), Some(computed));
    };
    let stored_roadmap: Roadmap = match serde_json::from_value(doc) {
        Ok(r) => r,
        Err(e) => {
            let d = divergence(
                "roadmap",
                format!("stored roadmap does not match the read-model shape: {e}"),
            );
            return (
                mismatch(computed_hash, Some(stored_hash), count, d),
                Some(computed),
            );
        }
    };
    let self_hash = compute_projection_hash(&stored_roadmap).ok();
    if computed_hash == stored_hash && self_hash.as_ref() == Some(&stored_hash) {
        let report = VerifyReport {
            verify_status: VerifyStatus::Ok,
            computed_hash: Some(computed_hash),
            stored_hash: Some(stored_hash),
            corruption: None,
            first_divergence: None,
            event_count: count,
            events_appended: Vec::new(),
        };
        return (report, Some(computed));
    }
    let diff = diff_projections(&stored_roadmap, &computed);
    let d = if let Some(task) = diff.first_task() {
        Divergence {
            section: "tasks".into(),
            task: Some(task.clone()),
            detail: format!("task {}", task.task_id()),
        }
    } else if let Some(f) = diff.project.first() {
        divergence("project", format!("field {}", f.field))
    } else if let Some(f) = diff.indexes.first() {
        divergence("indexes", format!("field {}", f.field))
    } else if computed_hash != stored_hash {
        divergence("run", "stored hash differs from the replayed digest")
    } else {
        divergence(
            "roadmap",
            "stored content does not hash to its recorded digest",
        )
    };
    (
        mismatch(computed_hash, Some(stored_hash), count, d),
        Some(computed),
    )
}

/// Read-only verification of raw log and roadmap bytes.
pub fn verify_bytes(log: &[u8], stored: &[u8]) -> VerifyReport {
    match parse_log(log, None) {
        Ok(records) => check_records(&records, stored).0,
        Err(c) => VerifyReport::corrupted(c, 0),
    }
}

fn records_verify(state: &Roadmap) -> bool {
    state.profile() == Profile::Full
        && !matches!(state.run.status, RunStatus::Success | RunStatus::Failed)
}

/// Verify under a held permit. In the full profile, while the run is open,
/// appends `verify.start` and then `verify.ok` or `verify.fail`. Returns the
/// projection including those events.
pub fn verify_with_permit(
    permit: &mut AppendPermit,
    stored: &[u8],
    now: &Timestamp,
) -> Result<(VerifyReport, Option<Roadmap>), VerifyError> {
    let (mut report, state) = check_records(permit.records(), stored);
    let Some(mut state) = state.filter(records_verify) else {
        return Ok((report, None));
    };
    let ts = format_ts(now);
    let computed = report.computed_hash.as_ref().map(|h| h.to_string());
    let start =
        NewEvent::system(Action::VerifyStart, &ts).payload(json!({"computed_hash": computed}));
    let end = match report.verify_status {
        VerifyStatus::Ok => NewEvent::system(Action::VerifyOk, &ts)
            .payload(json!({"projection_hash_sha256": computed})),
        status => NewEvent::system(Action::VerifyFail, &ts).payload(json!({
            "verify_status": status.as_str(),
            "computed_hash": computed,
            "stored_hash": report.stored_hash.as_ref().map(|h| h.to_string()),
        })),
    };
    for ev in [start, end] {
        let record = permit.append(ev)?;
        state = apply_event(Some(&state), &record)
            .expect("verify events are legal while the run is open");
        report.events_appended.push(record.event_seq);
    }
    report.event_count = permit.records().len() as u64;
    state.seal().expect("a replayed roadmap canonicalizes");
    Ok((report, Some(state)))
}

/// Replay `log_path` and compare with `roadmap_path`. A full-profile log with
/// an open run gets its verify events appended under the append permit; every
/// other case is read-only. Corruption is a report, not an error.
pub fn esaa_verify(
    log_path: &Path,
    roadmap_path: &Path,
    now: &Timestamp,
) -> Result<VerifyReport, VerifyError> {
    let log = read(log_path)?;
    let stored = read(roadmap_path)?;
    let records = match parse_log(&log, None) {
        Ok(r) => r,
        Err(c) => return Ok(VerifyReport::corrupted(c, 0)),
    };
    let (report, state) = check_records(&records, &stored);
    if !state.as_ref().is_some_and(records_verify) {
        return Ok(report);
    }
    let mut permit = match crate::event_store::EventLog::new(log_path).lock() {
        Ok(p) => p,
        Err(StoreError::Corrupted(c)) => return Ok(VerifyReport::corrupted(c, 0)),
        Err(e) => return Err(e.into()),
    };
    Ok(verify_with_permit(&mut permit, &stored, now)?.0)
}

/// The projection of the log prefix ending at `seq`, inclusive.
pub fn replay_records_to(records: &[EventRecord], seq: u64) -> Result<Roadmap, VerifyError> {
    let max = records
        .len()
        .checked_sub(1)
        .ok_or(VerifyError::SeqOutOfRange { seq, max: 0 })? as u64;
    if seq > max {
        return Err(VerifyError::SeqOutOfRange { seq, max });
    }
    project(&records[..=seq as usize]).map_err(|e| {
        let line = e.event_seq().map_or(0, |s| s as usize + 1);
        VerifyError::Corrupted(CorruptionReport::new(
            line,
            CorruptionKind::ProjectionFailure,
            e.to_string(),
        ))
    })
}

pub fn replay_to(log_path: &Path, seq: u64) -> Result<Roadmap, VerifyError> {
    let records = parse_log(&read(log_path)?, None).map_err(VerifyError::Corrupted)?;
    replay_records_to(&records, seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::NewEvent;

    const TS: &str = "2026-02-19T09:00:00-03:00";

    fn log() -> Vec<EventRecord> {
        let tasks = json!([
            {"task_id": "T-1", "kind": "spec", "title": "one"},
            {"task_id": "T-2", "kind": "impl", "title": "two", "depends_on": ["T-1"]}
        ]);
        vec![
            NewEvent::system(Action::RunInit, TS)
                .payload(json!({"run_id": "run-1", "project": {"name": "p", "audit_scope": "s"}, "tasks": tasks}))
                .with_seq(0),
            NewEvent::system(Action::AttemptCreate, TS).task("T-1").agent_id("agent-a").with_seq(1),
            NewEvent::system(Action::TaskUpdate, TS).task("T-1").payload(json!({"state": "done"})).with_seq(2),
        ]
    }

    fn stored(records: &[EventRecord]) -> Vec<u8> {
        project(records)
            .unwrap()
            .to_canonical()
            .unwrap()
            .into_bytes()
    }

    #[test]
    fn untouched_pair_is_ok() {
        let records = log();
        let (report, state) = check_records(&records, &stored(&records));
        assert!(report.is_ok(), "{report:?}");
        assert_eq!(report.computed_hash, report.stored_hash);
        assert!(state.is_some());
    }

    #[test]
    fn flipped_stored_hash_is_a_mismatch() {
        let records = log();
        let mut doc: Value = serde_json::from_slice(&stored(&records)).unwrap();
        let h = doc["run"]["projection_hash_sha256"]
            .as_str()
            .unwrap()
            .to_owned();
        let flipped = format!("{}{}", if h.starts_with('0') { '1' } else { '0' }, &h[1..]);
        doc["run"]["projection_hash_sha256"] = json!(flipped);
        let (report, _) = check_records(&records, &serde_json::to_vec(&doc).unwrap());
        assert_eq!(report.verify_status, VerifyStatus::Mismatch);
        assert_eq!(report.first_divergence.unwrap().section, "run");
    }

    #[test]
    fn edited_roadmap_with_kept_hash_is_a_mismatch() {
        let records = log();
        let mut doc: Value = serde_json::from_slice(&stored(&records)).unwrap();
        doc["tasks"][1]["title"] = json!("renamed");
        let (report, _) = check_records(&records, &serde_json::to_vec(&doc).unwrap());
        assert_eq!(report.verify_status, VerifyStatus::Mismatch);
        let d = report.first_divergence.unwrap();
        assert_eq!(d.task.unwrap().task_id(), "T-2");
    }

    #[test]
    fn unfoldable_log_is_corrupted() {
        let mut records = log();
        records.push(
            NewEvent::system(Action::TaskUpdate, TS)
                .task("T-1")
                .payload(json!({"state": "todo"}))
                .with_seq(3),
        );
        let (report, state) = check_records(&records, b"{}");
        assert_eq!(report.verify_status, VerifyStatus::Corrupted);
        assert_eq!(
            report.corruption.unwrap().kind,
            CorruptionKind::ProjectionFailure
        );
        assert!(state.is_none());
    }

    #[test]
    fn replay_bounds() {
        let records = log();
        assert_eq!(
            replay_records_to(&records, 2).unwrap(),
            project(&records).unwrap()
        );
        assert_eq!(
            replay_records_to(&records, 0).unwrap().run.last_event_seq,
            0
        );
        assert!(matches!(
            replay_records_to(&records, 3),
            Err(VerifyError::SeqOutOfRange { seq: 3, max: 2 })
        ));
    }
}
