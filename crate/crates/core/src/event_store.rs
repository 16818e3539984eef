//! Append-only JSONL event log.
//!
//! Each record is one canonical JSON line. `event_seq` is dense from 0 and
//! matches line order. Appends happen under an exclusive advisory lock on the
//! log file and are flushed to stable storage before they are acknowledged.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{to_canonical, CanonicalError};
use crate::clock::{parse_ts, parse_ts_strict};

pub const ORCHESTRATOR_ACTOR: &str = "orchestrator";

/// Every action name known to either protocol profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    RunInit,
    AttemptCreate,
    AttemptTimeout,
    OrchestratorDispatch,
    AgentResult,
    IssueReport,
    OutputRejected,
    OrchestratorFileWrite,
    OrchestratorViewMutate,
    TaskCreate,
    TaskUpdate,
    VerifyStart,
    VerifyOk,
    VerifyFail,
    RunEnd,
    RoadmapVersion,
    Promote,
    Claim,
    Complete,
    PhaseComplete,
}

impl Action {
    pub const FULL: [Action; 15] = [
        Action::RunInit,
        Action::AttemptCreate,
        Action::AttemptTimeout,
        Action::OrchestratorDispatch,
        Action::AgentResult,
        Action::IssueReport,
        Action::OutputRejected,
        Action::OrchestratorFileWrite,
        Action::OrchestratorViewMutate,
        Action::TaskCreate,
        Action::TaskUpdate,
        Action::VerifyStart,
        Action::VerifyOk,
        Action::VerifyFail,
        Action::RunEnd,
    ];

    pub const SIMPLIFIED: [Action; 5] = [
        Action::RoadmapVersion,
        Action::Promote,
        Action::Claim,
        Action::Complete,
        Action::PhaseComplete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::RunInit => "run.init",
            Action::AttemptCreate => "attempt.create",
            Action::AttemptTimeout => "attempt.timeout",
            Action::OrchestratorDispatch => "orchestrator.dispatch",
            Action::AgentResult => "agent.result",
            Action::IssueReport => "issue.report",
            Action::OutputRejected => "output.rejected",
            Action::OrchestratorFileWrite => "orchestrator.file.write",
            Action::OrchestratorViewMutate => "orchestrator.view.mutate",
            Action::TaskCreate => "task.create",
            Action::TaskUpdate => "task.update",
            Action::VerifyStart => "verify.start",
            Action::VerifyOk => "verify.ok",
            Action::VerifyFail => "verify.fail",
            Action::RunEnd => "run.end",
            Action::RoadmapVersion => "roadmap.version",
            Action::Promote => "promote",
            Action::Claim => "claim",
            Action::Complete => "complete",
            Action::PhaseComplete => "phase.complete",
        }
    }

    /// Actions only an agent may author. Everything else is orchestrator-authored.
    pub fn is_agent_authored(self) -> bool {
        matches!(
            self,
            Action::AgentResult | Action::IssueReport | Action::Claim | Action::Complete
        )
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::FULL
            .iter()
            .chain(Action::SIMPLIFIED.iter())
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "full-0.3.0")]
    Full,
    #[serde(rename = "simplified")]
    Simplified,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full-0.3.0",
            Profile::Simplified => "simplified",
        }
    }

    pub fn vocabulary(self) -> &'static [Action] {
        match self {
            Profile::Full => &Action::FULL,
            Profile::Simplified => &Action::SIMPLIFIED,
        }
    }

    pub fn allows(self, action: Action) -> bool {
        self.vocabulary().contains(&action)
    }

    /// The action every log of this profile must open with.
    pub fn initial_action(self) -> Action {
        match self {
            Profile::Full => Action::RunInit,
            Profile::Simplified => Action::RoadmapVersion,
        }
    }

    pub fn from_initial_action(action: &str) -> Option<Profile> {
        match action {
            "run.init" => Some(Profile::Full),
            "roadmap.version" => Some(Profile::Simplified),
            _ => None,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "full-0.3.0" => Ok(Profile::Full),
            "simplified" => Ok(Profile::Simplified),
            other => Err(format!(
                "unknown profile {other:?} (expected full-0.3.0 or simplified)"
            )),
        }
    }
}

/// One immutable fact in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub event_seq: u64,
    pub ts: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_results: Option<BTreeMap<String, bool>>,
}

impl EventRecord {
    pub fn action(&self) -> Option<Action> {
        self.action.parse().ok()
    }

    /// The agent identity behind the record, whichever field carries it.
    pub fn author(&self) -> Option<&str> {
        self.agent_id.as_deref().or(self.actor.as_deref())
    }

    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

/// A record before the store assigns its sequence number.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NewEvent {
    pub ts: String,
    pub action: String,
    pub actor: Option<String>,
    pub agent_id: Option<String>,
    pub task_id: Option<String>,
    pub correlation_id: Option<String>,
    pub attempt_id: Option<String>,
    pub idempotency_key: Option<String>,
    pub payload: Value,
    pub acceptance_results: Option<BTreeMap<String, bool>>,
}

impl NewEvent {
    pub fn new(action: Action, ts: impl Into<String>) -> Self {
        NewEvent {
            ts: ts.into(),
            action: action.as_str().to_owned(),
            ..Default::default()
        }
    }

    /// An orchestrator-authored event.
    pub fn system(action: Action, ts: impl Into<String>) -> Self {
        NewEvent::new(action, ts).actor(ORCHESTRATOR_ACTOR)
    }

    pub fn actor(mut self, actor: impl Into<String>) -> Self {
        self.actor = Some(actor.into());
        self
    }

    pub fn agent_id(mut self, agent: impl Into<String>) -> Self {
        self.agent_id = Some(agent.into());
        self
    }

    pub fn task(mut self, task_id: impl Into<String>) -> Self {
        self.task_id = Some(task_id.into());
        self
    }

    pub fn correlation(mut self, id: impl Into<String>) -> Self {
        self.correlation_id = Some(id.into());
        self
    }

    pub fn attempt(mut self, id: impl Into<String>) -> Self {
        self.attempt_id = Some(id.into());
        self
    }

    pub fn idempotency_key(mut self, key: impl Into<String>) -> Self {
        self.idempotency_key = Some(key.into());
        self
    }

    pub fn payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }

    pub fn acceptance(mut self, results: BTreeMap<String, bool>) -> Self {
        self.acceptance_results = Some(results);
        self
    }

    pub fn with_seq(self, event_seq: u64) -> EventRecord {
        EventRecord {
            event_seq,
            ts: self.ts,
            action: self.action,
            actor: self.actor,
            agent_id: self.agent_id,
            task_id: self.task_id,
            correlation_id: self.correlation_id,
            attempt_id: self.attempt_id,
            idempotency_key: self.idempotency_key,
            payload: self.payload,
            acceptance_results: self.acceptance_results,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    MalformedLine,
    SequenceGap,
    DuplicateSeq,
    VocabularyViolation,
    /// The log is well-formed line by line but cannot be folded into a read-model.
    ProjectionFailure,
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CorruptionKind::MalformedLine => "malformed-line",
            CorruptionKind::SequenceGap => "sequence-gap",
            CorruptionKind::DuplicateSeq => "duplicate-seq",
            CorruptionKind::VocabularyViolation => "vocabulary-violation",
            CorruptionKind::ProjectionFailure => "projection-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("line {line_number}: {kind}: {detail}")]
pub struct CorruptionReport {
    pub line_number: usize,
    pub kind: CorruptionKind,
    pub detail: String,
}

impl CorruptionReport {
    pub fn new(line_number: usize, kind: CorruptionKind, detail: impl Into<String>) -> Self {
        CorruptionReport {
            line_number,
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupted log: {0}")]
    Corrupt(CorruptionReport),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("action {action:?} is not in the {profile} vocabulary")]
    VocabularyViolation { action: String, profile: Profile },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("storage failure on {path}: {source}")]
    StorageFailure { path: PathBuf, source: io::Error },
    #[error("log is corrupted; refusing to append: {0}")]
    Corrupted(CorruptionReport),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

impl From<ReadError> for StoreError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Io { path, source } => StoreError::StorageFailure { path, source },
            ReadError::Corrupt(report) => StoreError::Corrupted(report),
        }
    }
}

/// Read and fully validate a log. The profile is taken from the first record.
pub fn read_all(path: &Path) -> Result<Vec<EventRecord>, ReadError> {
    let bytes = read_bytes(path)?;
    parse_log(&bytes, None).map_err(ReadError::Corrupt)
}

/// Read a log for a known profile.
pub fn read_all_with(path: &Path, profile: Profile) -> Result<Vec<EventRecord>, ReadError> {
    let bytes = read_bytes(path)?;
    parse_log(&bytes, Some(profile)).map_err(ReadError::Corrupt)
}

/// Lock-free read for concurrent observers: an unterminated final line is an
/// append in flight and is ignored rather than reported.
pub fn read_committed(path: &Path) -> Result<Vec<EventRecord>, ReadError> {
    let mut bytes = read_bytes(path)?;
    match bytes.iter().rposition(|&b| b == b'\n') {
        Some(last_lf) => bytes.truncate(last_lf + 1),
        None => bytes.clear(),
    }
    parse_log(&bytes, None).map_err(ReadError::Corrupt)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ReadError> {
    std::fs::read(path).map_err(|source| ReadError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Validate raw log bytes: strict line framing, dense sequence, vocabulary
/// and authorship rules of the profile.
pub fn parse_log(
    bytes: &[u8],
    profile: Option<Profile>,
) -> Result<Vec<EventRecord>, CorruptionReport> {
    let mut records = Vec::new();
    let mut profile = profile;
    let mut rest = bytes;
    let mut line_number = 0usize;
    while !rest.is_empty() {
        line_number += 1;
        let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => {
                let line = &rest[..i];
                rest = &rest[i + 1..];
                (line, true)
            }
            None => {
                let line = rest;
                rest = &[];
                (line, false)
            }
        };
        if !terminated {
            return Err(CorruptionReport::new(
                line_number,
                CorruptionKind::MalformedLine,
                "unterminated final line",
            ));
        }
        let record = parse_line(line, line_number)?;
        let expected = records.len() as u64;
        if record.event_seq != expected {
            let kind = if record.event_seq < expected {
                CorruptionKind::DuplicateSeq
            } else {
                CorruptionKind::SequenceGap
            };
            return Err(CorruptionReport::new(
                line_number,
                kind,
                format!("expected event_seq {expected}, found {}", record.event_seq),
            ));
        }
        if line_number == 1 && profile.is_none() {
            profile = Some(Profile::from_initial_action(&record.action).ok_or_else(|| {
                CorruptionReport::new(
                    1,
                    CorruptionKind::VocabularyViolation,
                    format!(
                        "log must open with run.init or roadmap.version, found {:?}",
                        record.action
                    ),
                )
            })?);
        }
        let profile = profile.expect("profile resolved on the first line");
        check_record(&record, profile).map_err(|detail| {
            CorruptionReport::new(line_number, CorruptionKind::VocabularyViolation, detail)
        })?;
        records.push(record);
    }
    Ok(records)
}

fn parse_line(line: &[u8], line_number: usize) -> Result<EventRecord, CorruptionReport> {
    let malformed =
        |detail: String| CorruptionReport::new(line_number, CorruptionKind::MalformedLine, detail);
    let text = std::str::from_utf8(line).map_err(|e| malformed(format!("invalid UTF-8: {e}")))?;
    if text.is_empty() {
        return Err(malformed("blank line".into()));
    }
    let record: EventRecord = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    parse_ts(&record.ts).map_err(|e| malformed(e.to_string()))?;
    Ok(record)
}

/// Vocabulary and authorship rules shared by the reader and the writer.
fn check_record(record: &EventRecord, profile: Profile) -> Result<(), String> {
    let action: Action = record.action.parse()?;
    if !profile.allows(action) {
        return Err(format!(
            "action {:?} is not in the {profile} vocabulary",
            record.action
        ));
    }
    if (record.event_seq == 0) != (action == profile.initial_action()) {
        return Err(format!(
            "{} must be the first event and only the first",
            profile.initial_action()
        ));
    }
    match (profile, action) {
        (Profile::Full, Action::AgentResult | Action::IssueReport) => match record.actor.as_deref()
        {
            Some(actor) if actor.starts_with("agent-") => Ok(()),
            other => Err(format!(
                "agent action {action} with non-agent actor {other:?}"
            )),
        },
        (Profile::Full, _) => match record.actor.as_deref() {
            Some(actor) if actor.starts_with("agent-") => Err(format!(
                "orchestrator action {action} authored by agent {actor:?}"
            )),
            _ => Ok(()),
        },
        (Profile::Simplified, Action::Claim | Action::Complete) => match record.author() {
            Some(agent) if !agent.is_empty() => Ok(()),
            _ => Err(format!("{action} without an agent_id")),
        },
        (Profile::Simplified, _) => Ok(()),
    }
}

/// Import lines from a foreign log (for example a hand-copied extract) that
/// may lack `event_seq` and timestamp offsets. Missing sequence numbers are
/// derived from line position starting at `first_seq`; explicit ones must agree.
/// Vocabulary is checked against `profile`; the opening-event rule is not,
/// since extracts usually start mid-log.
pub fn ingest_lines(
    text: &str,
    profile: Profile,
    first_seq: u64,
) -> Result<Vec<EventRecord>, CorruptionReport> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_number = i + 1;
        let expected = first_seq + i as u64;
        let malformed = |detail: String| {
            CorruptionReport::new(line_number, CorruptionKind::MalformedLine, detail)
        };
        let mut value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| malformed("not a JSON object".into()))?;
        obj.retain(|_, v| !v.is_null());
        match obj.get("event_seq").and_then(Value::as_u64) {
            Some(seq) if seq != expected => {
                let kind = if seq < expected {
                    CorruptionKind::DuplicateSeq
                } else {
                    CorruptionKind::SequenceGap
                };
                return Err(CorruptionReport::new(
                    line_number,
                    kind,
                    format!("expected {expected}, found {seq}"),
                ));
            }
            Some(_) => {}
            None => {
                obj.insert("event_seq".into(), Value::from(expected));
            }
        }
        let record: EventRecord =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        parse_ts(&record.ts).map_err(|e| malformed(e.to_string()))?;
        let action: Action = record.action.parse().map_err(|e: String| {
            CorruptionReport::new(line_number, CorruptionKind::VocabularyViolation, e)
        })?;
        if !profile.allows(action) {
            return Err(CorruptionReport::new(
                line_number,
                CorruptionKind::VocabularyViolation,
                format!("{action} is not in the {profile} vocabulary"),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Per-action event counts.
pub fn tail_verify_counts(records: &[EventRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.action.clone()).or_insert(0) += 1;
    }
    counts
}

pub fn encode_record(record: &EventRecord) -> Result<Vec<u8>, CanonicalError> {
    Ok(to_canonical(record)?.into_bytes())
}

/// Handle to a log file. Cheap to clone; holds no open descriptor.
#[derive(Debug, Clone)]
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        EventLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Create an empty log. Fails if the file already exists.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|source| StoreError::StorageFailure {
                path: path.clone(),
                source,
            })?;
        Ok(EventLog { path })
    }

    /// Block until the exclusive append permit is held, then load the log.
    pub fn lock(&self) -> Result<AppendPermit, StoreError> {
        let io_err = |source| StoreError::StorageFailure {
            path: self.path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err)?;
        file.lock().map_err(io_err)?;
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0)).map_err(io_err)?;
        file.read_to_end(&mut bytes).map_err(io_err)?;
        let records = parse_log(&bytes, None).map_err(StoreError::Corrupted)?;
        let profile = records.first().map(|r| {
            Profile::from_initial_action(&r.action).expect("parse_log validated the opening event")
        });
        Ok(AppendPermit {
            file,
            path: self.path.clone(),
            len: bytes.len() as u64,
            records,
            profile,
        })
    }
}

/// The single-writer permit. Dropping it releases the file lock.
#[derive(Debug)]
pub struct AppendPermit {
    file: File,
    path: PathBuf,
    len: u64,
    records: Vec<EventRecord>,
    profile: Option<Profile>,
}

impl AppendPermit {
    /// Every record in the log, including those appended through this permit.
    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn profile(&self) -> Option<Profile> {
        self.profile
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64
    }

    /// Set the profile of an empty log before its first append.
    pub fn set_profile(&mut self, profile: Profile) {
        if self.records.is_empty() {
            self.profile = Some(profile);
        }
    }

    /// Assign the next sequence number, write one canonical line and fsync.
    pub fn append(&mut self, event: NewEvent) -> Result<EventRecord, StoreError> {
        let profile = match self.profile {
            Some(p) => p,
            None => Profile::from_initial_action(&event.action).ok_or_else(|| {
                StoreError::VocabularyViolation {
                    action: event.action.clone(),
                    profile: Profile::Full,
                }
            })?,
        };
        parse_ts_strict(&event.ts).map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        let record = event.with_seq(self.next_seq());
        let action: Action =
            record
                .action
                .parse()
                .map_err(|_| StoreError::VocabularyViolation {
                    action: record.action.clone(),
                    profile,
                })?;
        if !profile.allows(action) {
            return Err(StoreError::VocabularyViolation {
                action: record.action.clone(),
                profile,
            });
        }
        check_record(&record, profile).map_err(StoreError::InvalidRecord)?;
        let line = encode_record(&record)?;
        if let Err(source) = self.write_durably(&line) {
            // Never leave a partial line behind.
            let _ = self.file.set_len(self.len);
            let _ = self.file.sync_data();
            return Err(StoreError::StorageFailure {
                path: self.path.clone(),
                source,
            });
        }
        self.len += line.len() as u64;
        self.profile = Some(profile);
        self.records.push(record.clone());
        Ok(record)
    }

    fn write_durably(&mut self, line: &[u8]) -> io::Result<()> {
        self.file.write_all(line)?;
        self.file.sync_data()
    }
}

impl Drop for AppendPermit {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}
