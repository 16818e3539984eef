//! The read-model and the pure fold that derives it from the log.
//!
//! `project` folds every record from event zero. Each step goes through
//! [`apply_event`], which never mutates its input. Two rules hold for both
//! profiles: a task that reached `done` never leaves it, and a task only
//! becomes workable once all of its dependencies are done.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{
    compute_projection_hash, to_canonical, CanonicalBytes, CanonicalError, HashDigest,
};
use crate::event_store::{Action, EventRecord, Profile};

pub const SCHEMA_VERSION: &str = "0.3.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Spec,
    Impl,
    Qa,
    EmergencyPatch,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Spec,
        TaskKind::Impl,
        TaskKind::Qa,
        TaskKind::EmergencyPatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Spec => "spec",
            TaskKind::Impl => "impl",
            TaskKind::Qa => "qa",
            TaskKind::EmergencyPatch => "emergency_patch",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Todo,
    InProgress,
    Blocked,
    Done,
    Backlog,
    Ready,
}

impl TaskState {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Todo => "todo",
            TaskState::InProgress => "in_progress",
            TaskState::Blocked => "blocked",
            TaskState::Done => "done",
            TaskState::Backlog => "backlog",
            TaskState::Ready => "ready",
        }
    }

    pub fn states_of(profile: Profile) -> &'static [TaskState] {
        match profile {
            Profile::Full => &[
                TaskState::Todo,
                TaskState::InProgress,
                TaskState::Blocked,
                TaskState::Done,
            ],
            Profile::Simplified => &[TaskState::Backlog, TaskState::Ready, TaskState::Done],
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Initialized,
    Running,
    Success,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStatus {
    Ok,
    Mismatch,
    Corrupted,
}

impl VerifyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerifyStatus::Ok => "ok",
            VerifyStatus::Mismatch => "mismatch",
            VerifyStatus::Corrupted => "corrupted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub task_id: String,
    pub kind: TaskKind,
    pub title: String,
    pub state: TaskState,
    pub depends_on: Vec<String>,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_results: Option<BTreeMap<String, bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectMeta {
    pub name: String,
    pub created_at: String,
    pub audit_scope: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub run_id: String,
    pub profile: Profile,
    pub status: RunStatus,
    pub last_event_seq: u64,
    pub last_event_ts: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_hash_sha256: Option<HashDigest>,
    pub verify_status: VerifyStatus,
}

/// Lookup maps derived from the task list, plus the set of phases whose
/// completion has been recorded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Indexes {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_state: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_phase: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_agent: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub completed_phases: Vec<String>,
}

impl Indexes {
    /// Recompute the task-derived maps; `completed_phases` is carried over.
    pub fn derive(tasks: &[TaskEntry], completed_phases: Vec<String>) -> Indexes {
        let mut ix = Indexes {
            completed_phases,
            ..Indexes::default()
        };
        for t in tasks {
            ix.by_state
                .entry(t.state.as_str().to_owned())
                .or_default()
                .push(t.task_id.clone());
            if let Some(phase) = &t.phase_id {
                ix.by_phase
                    .entry(phase.clone())
                    .or_default()
                    .push(t.task_id.clone());
            }
            if let Some(agent) = &t.claimed_by {
                ix.by_agent
                    .entry(agent.clone())
                    .or_default()
                    .push(t.task_id.clone());
            }
        }
        for ids in ix
            .by_state
            .values_mut()
            .chain(ix.by_phase.values_mut())
            .chain(ix.by_agent.values_mut())
        {
            ids.sort();
        }
        ix.completed_phases.sort();
        ix.completed_phases.dedup();
        ix
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roadmap {
    pub schema_version: String,
    pub project: ProjectMeta,
    pub run: RunMeta,
    pub tasks: Vec<TaskEntry>,
    pub indexes: Indexes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseEntry {
    pub phase_id: String,
    pub task_ids: Vec<String>,
    pub complete: bool,
}

impl Roadmap {
    pub fn profile(&self) -> Profile {
        self.run.profile
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskEntry> {
        self.tasks
            .binary_search_by(|t| t.task_id.as_str().cmp(task_id))
            .ok()
            .map(|i| &self.tasks[i])
    }

    fn task_mut(&mut self, task_id: &str) -> Option<&mut TaskEntry> {
        match self
            .tasks
            .binary_search_by(|t| t.task_id.as_str().cmp(task_id))
        {
            Ok(i) => Some(&mut self.tasks[i]),
            Err(_) => None,
        }
    }

    pub fn count_in(&self, state: TaskState) -> usize {
        self.tasks.iter().filter(|t| t.state == state).count()
    }

    /// Task counts per state, including zero counts for the profile's states.
    pub fn state_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = TaskState::states_of(self.profile())
            .iter()
            .map(|s| (s.as_str().to_owned(), 0))
            .collect();
        for t in &self.tasks {
            *counts.entry(t.state.as_str().to_owned()).or_default() += 1;
        }
        counts
    }

    pub fn phases(&self) -> Vec<PhaseEntry> {
        self.indexes
            .by_phase
            .iter()
            .map(|(phase_id, task_ids)| PhaseEntry {
                phase_id: phase_id.clone(),
                task_ids: task_ids.clone(),
                complete: self
                    .indexes
                    .completed_phases
                    .binary_search(phase_id)
                    .is_ok(),
            })
            .collect()
    }

    pub fn dependencies_done(&self, task: &TaskEntry) -> Result<(), String> {
        for dep in &task.depends_on {
            match self.task(dep) {
                Some(d) if d.state == TaskState::Done => {}
                _ => return Err(dep.clone()),
            }
        }
        Ok(())
    }

    pub fn all_done(&self) -> bool {
        self.tasks.iter().all(|t| t.state == TaskState::Done)
    }

    pub fn refresh_indexes(&mut self) {
        let completed = std::mem::take(&mut self.indexes.completed_phases);
        self.indexes = Indexes::derive(&self.tasks, completed);
    }

    pub fn digest(&self) -> Result<HashDigest, CanonicalError> {
        compute_projection_hash(self)
    }

    /// Recompute indexes and store the projection hash.
    pub fn seal(&mut self) -> Result<(), CanonicalError> {
        self.refresh_indexes();
        self.run.projection_hash_sha256 = Some(compute_projection_hash(self)?);
        Ok(())
    }

    /// The `roadmap.json` octets.
    pub fn to_canonical(&self) -> Result<CanonicalBytes, CanonicalError> {
        to_canonical(self)
    }
}

/// A task definition as carried by catalog and `task.create` payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSeed {
    pub task_id: String,
    pub kind: TaskKind,
    pub title: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_id: Option<String>,
    /// Initial state; defaults to the profile's entry state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TaskState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSeed {
    pub name: String,
    pub audit_scope: String,
}

/// Payload of the opening event (`run.init` or `roadmap.version`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitPayload {
    pub run_id: String,
    pub project: ProjectSeed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default)]
    pub tasks: Vec<TaskSeed>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskUpdatePayload {
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProjectionError {
    #[error("no initial event: a log must open with run.init or roadmap.version")]
    MissingInitialEvent,
    #[error("event_seq {found}: expected {expected}")]
    SequenceMismatch { expected: u64, found: u64 },
    #[error("event_seq {event_seq}: {action} is not part of the {profile} profile")]
    VocabularyViolation {
        event_seq: u64,
        action: String,
        profile: Profile,
    },
    #[error("event_seq {event_seq}: illegal transition: {detail}")]
    IllegalTransition { event_seq: u64, detail: String },
    #[error("event_seq {event_seq}: task {task_id} is done and cannot change")]
    DoneRegression { event_seq: u64, task_id: String },
    #[error("event_seq {event_seq}: unknown task {task_id}")]
    UnknownTask { event_seq: u64, task_id: String },
    #[error("event_seq {event_seq}: unknown phase {phase_id}")]
    UnknownPhase { event_seq: u64, phase_id: String },
    #[error("event_seq {event_seq}: task {task_id} depends on {dependency}, which is not done")]
    DependencyUnsatisfied {
        event_seq: u64,
        task_id: String,
        dependency: String,
    },
    #[error("event_seq {event_seq}: invalid payload: {detail}")]
    InvalidPayload { event_seq: u64, detail: String },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

impl ProjectionError {
    pub fn event_seq(&self) -> Option<u64> {
        match self {
            ProjectionError::MissingInitialEvent | ProjectionError::Canonical(_) => None,
            ProjectionError::SequenceMismatch { found, .. } => Some(*found),
            ProjectionError::VocabularyViolation { event_seq, .. }
            | ProjectionError::IllegalTransition { event_seq, .. }
            | ProjectionError::DoneRegression { event_seq, .. }
            | ProjectionError::UnknownTask { event_seq, .. }
            | ProjectionError::UnknownPhase { event_seq, .. }
            | ProjectionError::DependencyUnsatisfied { event_seq, .. }
            | ProjectionError::InvalidPayload { event_seq, .. } => Some(*event_seq),
        }
    }
}

/// Build the state that the opening event describes.
fn initial_state(ev: &EventRecord, profile: Profile) -> Result<Roadmap, ProjectionError> {
    let seq = ev.event_seq;
    let init: InitPayload = serde_json::from_value(ev.payload.clone()).map_err(|e| {
        ProjectionError::InvalidPayload {
            event_seq: seq,
            detail: e.to_string(),
        }
    })?;
    let entry_state = match profile {
        Profile::Full => TaskState::Todo,
        Profile::Simplified => TaskState::Backlog,
    };
    let mut tasks = Vec::with_capacity(init.tasks.len());
    for seed in &init.tasks {
        let state = seed.state.unwrap_or(entry_state);
        let allowed_initial = match profile {
            Profile::Full => state == TaskState::Todo,
            Profile::Simplified => state == TaskState::Backlog || state == TaskState::Ready,
        };
        if !allowed_initial {
            return Err(ProjectionError::IllegalTransition {
                event_seq: seq,
                detail: format!("task {} cannot start in state {state}", seed.task_id),
            });
        }
        if state == TaskState::Ready && !seed.depends_on.is_empty() {
            return Err(ProjectionError::DependencyUnsatisfied {
                event_seq: seq,
                task_id: seed.task_id.clone(),
                dependency: seed.depends_on[0].clone(),
            });
        }
        tasks.push(task_from_seed(seed, state));
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    if let Some(w) = tasks.windows(2).find(|w| w[0].task_id == w[1].task_id) {
        return Err(ProjectionError::IllegalTransition {
            event_seq: seq,
            detail: format!("duplicate task id {}", w[0].task_id),
        });
    }
    check_catalog_graph(&tasks).map_err(|detail| ProjectionError::IllegalTransition {
        event_seq: seq,
        detail,
    })?;
    let mut roadmap = Roadmap {
        schema_version: SCHEMA_VERSION.to_owned(),
        project: ProjectMeta {
            name: init.project.name,
            created_at: ev.ts.clone(),
            audit_scope: init.project.audit_scope,
        },
        run: RunMeta {
            run_id: init.run_id,
            profile,
            status: RunStatus::Initialized,
            last_event_seq: seq,
            last_event_ts: ev.ts.clone(),
            projection_hash_sha256: None,
            verify_status: VerifyStatus::Ok,
        },
        tasks,
        indexes: Indexes::default(),
    };
    roadmap.refresh_indexes();
    Ok(roadmap)
}

fn task_from_seed(seed: &TaskSeed, state: TaskState) -> TaskEntry {
    let mut files = seed.files.clone();
    files.sort();
    files.dedup();
    TaskEntry {
        task_id: seed.task_id.clone(),
        kind: seed.kind,
        title: seed.title.clone(),
        state,
        depends_on: seed.depends_on.clone(),
        files,
        phase_id: seed.phase_id.clone(),
        acceptance_results: None,
        claimed_by: None,
    }
}

/// Dependencies must name catalog tasks and form a DAG. `tasks` is sorted.
fn check_catalog_graph(tasks: &[TaskEntry]) -> Result<(), String> {
    let index: BTreeMap<&str, usize> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.as_str(), i))
        .collect();
    for t in tasks {
        for d in &t.depends_on {
            if !index.contains_key(d.as_str()) {
                return Err(format!("task {} depends on unknown task {d}", t.task_id));
            }
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = finished
    let mut mark = vec![0u8; tasks.len()];
    for root in 0..tasks.len() {
        if mark[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = 1;
        while let Some((node, next)) = stack.pop() {
            let deps = &tasks[node].depends_on;
            if next < deps.len() {
                stack.push((node, next + 1));
                let child = index[deps[next].as_str()];
                match mark[child] {
                    0 => {
                        mark[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => return Err(format!("dependency cycle through {}", tasks[child].task_id)),
                    _ => {}
                }
            } else {
                mark[node] = 2;
            }
        }
    }
    Ok(())
}

/// Fold one record into the state. `state` is `None` before the opening event.
pub fn apply_event(state: Option<&Roadmap>, ev: &EventRecord) -> Result<Roadmap, ProjectionError> {
    let seq = ev.event_seq;
    let Some(prev) = state else {
        if seq != 0 {
            return Err(ProjectionError::SequenceMismatch {
                expected: 0,
                found: seq,
            });
        }
        let profile =
            Profile::from_initial_action(&ev.action).ok_or(ProjectionError::MissingInitialEvent)?;
        return initial_state(ev, profile);
    };
    let expected = prev.run.last_event_seq + 1;
    if seq != expected {
        return Err(ProjectionError::SequenceMismatch {
            expected,
            found: seq,
        });
    }
    let profile = prev.profile();
    let action = ev.action().filter(|a| profile.allows(*a)).ok_or_else(|| {
        ProjectionError::VocabularyViolation {
            event_seq: seq,
            action: ev.action.clone(),
            profile,
        }
    })?;
    if action == profile.initial_action() {
        return Err(ProjectionError::IllegalTransition {
            event_seq: seq,
            detail: format!("{action} may only open the log"),
        });
    }
    if matches!(prev.run.status, RunStatus::Success | RunStatus::Failed) && profile == Profile::Full
    {
        return Err(ProjectionError::IllegalTransition {
            event_seq: seq,
            detail: "run already ended".into(),
        });
    }

    let mut next = prev.clone();
    next.run.last_event_seq = seq;
    next.run.last_event_ts = ev.ts.clone();
    next.run.projection_hash_sha256 = None;
    let step = Step { ev, seq };
    match profile {
        Profile::Full => step.apply_full(&mut next, action)?,
        Profile::Simplified => step.apply_simplified(&mut next, action)?,
    }
    next.refresh_indexes();
    Ok(next)
}

struct Step<'a> {
    ev: &'a EventRecord,
    seq: u64,
}

impl Step<'_> {
    fn task_id(&self) -> Result<&str, ProjectionError> {
        self.ev
            .task_id
            .as_deref()
            .ok_or_else(|| ProjectionError::InvalidPayload {
                event_seq: self.seq,
                detail: format!("{} requires task_id", self.ev.action),
            })
    }

    fn payload<T: serde::de::DeserializeOwned>(&self) -> Result<T, ProjectionError> {
        serde_json::from_value(self.ev.payload.clone()).map_err(|e| {
            ProjectionError::InvalidPayload {
                event_seq: self.seq,
                detail: e.to_string(),
            }
        })
    }

    fn illegal(&self, detail: impl Into<String>) -> ProjectionError {
        ProjectionError::IllegalTransition {
            event_seq: self.seq,
            detail: detail.into(),
        }
    }

    /// Look up a task that the event is about to change. Done tasks are frozen.
    fn live_task<'r>(
        &self,
        roadmap: &'r mut Roadmap,
    ) -> Result<&'r mut TaskEntry, ProjectionError> {
        let id = self.task_id()?;
        let seq = self.seq;
        let task = roadmap
            .task_mut(id)
            .ok_or_else(|| ProjectionError::UnknownTask {
                event_seq: seq,
                task_id: id.into(),
            })?;
        if task.state == TaskState::Done {
            return Err(ProjectionError::DoneRegression {
                event_seq: seq,
                task_id: id.into(),
            });
        }
        Ok(task)
    }

    fn require_known_task(&self, roadmap: &Roadmap) -> Result<(), ProjectionError> {
        let id = self.task_id()?;
        match roadmap.task(id) {
            Some(_) => Ok(()),
            None => Err(ProjectionError::UnknownTask {
                event_seq: self.seq,
                task_id: id.into(),
            }),
        }
    }

    fn require_dependencies(&self, roadmap: &Roadmap) -> Result<(), ProjectionError> {
        let id = self.task_id()?;
        let task = roadmap.task(id).expect("caller resolved the task");
        roadmap.dependencies_done(task).map_err(|dependency| {
            ProjectionError::DependencyUnsatisfied {
                event_seq: self.seq,
                task_id: id.into(),
                dependency,
            }
        })
    }

    fn agent(&self) -> Result<String, ProjectionError> {
        self.ev
            .payload_str("agent")
            .or(self.ev.author())
            .map(str::to_owned)
            .ok_or_else(|| ProjectionError::InvalidPayload {
                event_seq: self.seq,
                detail: "missing agent".into(),
            })
    }

    fn apply_full(&self, next: &mut Roadmap, action: Action) -> Result<(), ProjectionError> {
        match action {
            Action::TaskCreate => {
                let seed: TaskSeed = self.payload()?;
                if seed.state.is_some_and(|s| s != TaskState::Todo) {
                    return Err(self.illegal("task.create must start a task in todo"));
                }
                if next.task(&seed.task_id).is_some() {
                    return Err(self.illegal(format!("task id {} already exists", seed.task_id)));
                }
                if let Some(dep) = seed.depends_on.iter().find(|d| next.task(d).is_none()) {
                    return Err(ProjectionError::UnknownTask {
                        event_seq: self.seq,
                        task_id: dep.clone(),
                    });
                }
                let task = task_from_seed(&seed, TaskState::Todo);
                let at = next.tasks.partition_point(|t| t.task_id < task.task_id);
                next.tasks.insert(at, task);
            }
            Action::AttemptCreate | Action::OrchestratorDispatch => {
                let agent = self.agent()?;
                let state = self.live_task(next)?.state;
                let allowed = match action {
                    Action::AttemptCreate => matches!(state, TaskState::Todo | TaskState::Blocked),
                    _ => state != TaskState::Done,
                };
                if !allowed {
                    return Err(self.illegal(format!("{action} on a task in state {state}")));
                }
                self.require_dependencies(next)?;
                let task = self.live_task(next)?;
                task.state = TaskState::InProgress;
                task.claimed_by = Some(agent);
                if next.run.status == RunStatus::Initialized {
                    next.run.status = RunStatus::Running;
                }
            }
            Action::AttemptTimeout => {
                let task = self.live_task(next)?;
                if task.state == TaskState::InProgress {
                    task.state = TaskState::Todo;
                    task.claimed_by = None;
                }
            }
            Action::TaskUpdate => {
                let update: TaskUpdatePayload = self.payload()?;
                if !TaskState::states_of(Profile::Full).contains(&update.state) {
                    return Err(self.illegal(format!(
                        "state {} is not a full-profile state",
                        update.state
                    )));
                }
                let task = self.live_task(next)?;
                if update.state == TaskState::Done && task.state != TaskState::InProgress {
                    return Err(self.illegal(format!(
                        "task {} cannot finish from {}",
                        task.task_id, task.state
                    )));
                }
                task.state = update.state;
                task.files.extend(update.files);
                task.files.sort();
                task.files.dedup();
            }
            Action::AgentResult | Action::IssueReport => self.require_known_task(next)?,
            Action::OrchestratorFileWrite => {
                if self.ev.payload.get("ok").and_then(Value::as_bool) == Some(false) {
                    next.run.status = RunStatus::Failed;
                }
            }
            Action::OutputRejected | Action::OrchestratorViewMutate | Action::VerifyStart => {}
            Action::VerifyOk => next.run.verify_status = VerifyStatus::Ok,
            Action::VerifyFail => {
                next.run.verify_status = match self.ev.payload_str("verify_status") {
                    Some("corrupted") => VerifyStatus::Corrupted,
                    _ => VerifyStatus::Mismatch,
                }
            }
            Action::RunEnd => {
                next.run.status = match self.ev.payload_str("status") {
                    Some("success") => RunStatus::Success,
                    Some("failed") => RunStatus::Failed,
                    other => return Err(self.illegal(format!("run.end with status {other:?}"))),
                };
            }
            Action::RunInit
            | Action::RoadmapVersion
            | Action::Promote
            | Action::Claim
            | Action::Complete
            | Action::PhaseComplete => unreachable!("filtered by profile vocabulary"),
        }
        Ok(())
    }

    fn apply_simplified(&self, next: &mut Roadmap, action: Action) -> Result<(), ProjectionError> {
        match action {
            Action::Promote => {
                let state = self.live_task(next)?.state;
                if state != TaskState::Backlog {
                    return Err(self.illegal(format!("promote on a task in state {state}")));
                }
                self.require_dependencies(next)?;
                self.live_task(next)?.state = TaskState::Ready;
            }
            Action::Claim | Action::Complete => {
                let agent = self.agent()?;
                let acceptance = self.ev.acceptance_results.clone();
                let task = self.live_task(next)?;
                if task.state != TaskState::Ready {
                    return Err(self.illegal(format!(
                        "{action} on task {} in state {}",
                        task.task_id, task.state
                    )));
                }
                if let Some(holder) = task.claimed_by.as_ref().filter(|h| **h != agent) {
                    return Err(
                        self.illegal(format!("task {} is claimed by {holder}", task.task_id))
                    );
                }
                task.claimed_by = Some(agent);
                if action == Action::Complete {
                    task.state = TaskState::Done;
                    task.acceptance_results = acceptance;
                }
                if next.run.status == RunStatus::Initialized {
                    next.run.status = RunStatus::Running;
                }
            }
            Action::PhaseComplete => {
                let phase_id = self
                    .ev
                    .payload_str("phase_id")
                    .ok_or_else(|| ProjectionError::InvalidPayload {
                        event_seq: self.seq,
                        detail: "phase.complete requires payload.phase_id".into(),
                    })?
                    .to_owned();
                let Some(members) = next.indexes.by_phase.get(&phase_id) else {
                    return Err(ProjectionError::UnknownPhase {
                        event_seq: self.seq,
                        phase_id,
                    });
                };
                if next.indexes.completed_phases.contains(&phase_id) {
                    return Err(self.illegal(format!("phase {phase_id} already complete")));
                }
                if let Some(open) = members
                    .iter()
                    .find(|id| next.task(id).map(|t| t.state) != Some(TaskState::Done))
                {
                    return Err(
                        self.illegal(format!("phase {phase_id} still has unfinished task {open}"))
                    );
                }
                next.indexes.completed_phases.push(phase_id);
                next.indexes.completed_phases.sort();
                if next.indexes.completed_phases.len() == next.indexes.by_phase.len() {
                    next.run.status = RunStatus::Success;
                } else if next.run.status == RunStatus::Initialized {
                    next.run.status = RunStatus::Running;
                }
            }
            _ => unreachable!("filtered by profile vocabulary"),
        }
        Ok(())
    }
}

/// Fold a whole log from event zero and seal the result with its hash.
pub fn project(events: &[EventRecord]) -> Result<Roadmap, ProjectionError> {
    let mut state: Option<Roadmap> = None;
    for ev in events {
        state = Some(apply_event(state.as_ref(), ev)?);
    }
    let mut roadmap = state.ok_or(ProjectionError::MissingInitialEvent)?;
    roadmap.seal()?;
    Ok(roadmap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldChange {
    pub field: String,
    pub before: Value,
    pub after: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum TaskDiff {
    Added {
        task_id: String,
    },
    Removed {
        task_id: String,
    },
    Changed {
        task_id: String,
        fields: Vec<FieldChange>,
    },
}

impl TaskDiff {
    pub fn task_id(&self) -> &str {
        match self {
            TaskDiff::Added { task_id }
            | TaskDiff::Removed { task_id }
            | TaskDiff::Changed { task_id, .. } => task_id,
        }
    }
}

/// Differences between two roadmaps. `tasks`, `project` and `indexes` cover
/// the hashed content; `run` differences are informational only.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RoadmapDiff {
    pub project: Vec<FieldChange>,
    pub tasks: Vec<TaskDiff>,
    pub indexes: Vec<FieldChange>,
    pub run: Vec<FieldChange>,
}

impl RoadmapDiff {
    /// True when no hashed content differs.
    pub fn is_empty(&self) -> bool {
        self.project.is_empty() && self.tasks.is_empty() && self.indexes.is_empty()
    }

    pub fn first_task(&self) -> Option<&TaskDiff> {
        self.tasks.first()
    }
}

fn object_diff(prefix: &str, a: &Value, b: &Value, out: &mut Vec<FieldChange>) {
    let empty = serde_json::Map::new();
    let ao = a.as_object().unwrap_or(&empty);
    let bo = b.as_object().unwrap_or(&empty);
    let keys: BTreeSet<&String> = ao.keys().chain(bo.keys()).collect();
    for k in keys {
        let before = ao.get(k).cloned().unwrap_or(Value::Null);
        let after = bo.get(k).cloned().unwrap_or(Value::Null);
        if before != after {
            out.push(FieldChange {
                field: format!("{prefix}{k}"),
                before,
                after,
            });
        }
    }
}

pub fn diff_projections(a: &Roadmap, b: &Roadmap) -> RoadmapDiff {
    let mut diff = RoadmapDiff::default();
    if a.schema_version != b.schema_version {
        diff.project.push(FieldChange {
            field: "schema_version".into(),
            before: a.schema_version.clone().into(),
            after: b.schema_version.clone().into(),
        });
    }
    object_diff("", &v(&a.project), &v(&b.project), &mut diff.project);
    object_diff("", &v(&a.indexes), &v(&b.indexes), &mut diff.indexes);
    object_diff("", &v(&a.run), &v(&b.run), &mut diff.run);

    let left: BTreeMap<&str, &TaskEntry> =
        a.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let right: BTreeMap<&str, &TaskEntry> =
        b.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let ids: BTreeSet<&str> = left.keys().chain(right.keys()).copied().collect();
    for id in ids {
        match (left.get(id), right.get(id)) {
            (Some(_), None) => diff.tasks.push(TaskDiff::Removed { task_id: id.into() }),
            (None, Some(_)) => diff.tasks.push(TaskDiff::Added { task_id: id.into() }),
            (Some(x), Some(y)) if x != y => {
                let mut fields = Vec::new();
                object_diff("", &v(x), &v(y), &mut fields);
                diff.tasks.push(TaskDiff::Changed {
                    task_id: id.into(),
                    fields,
                });
            }
            _ => {}
        }
    }
    // Same tasks in a different order still changes the hashed array.
    if diff.tasks.is_empty() && a.tasks != b.tasks {
        diff.indexes.push(FieldChange {
            field: "tasks(order)".into(),
            before: Value::Null,
            after: Value::Null,
        });
    }
    diff
}

fn v<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("roadmap parts serialize")
}
