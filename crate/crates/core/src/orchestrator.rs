//! The transactional pipeline between agents and the log.
//!
//! Every mutation runs as a transaction under the log's append permit: the
//! current projection is rebuilt from the permit's records, each event is
//! folded into it before it is written (so the log can never hold an event the
//! projection would refuse), and `roadmap.json` is rewritten from the result.
//!
//! Agent envelopes pass through fixed stages: schema, authority, attempt
//! freshness, boundary, idempotency, conflict, then effects. The intention
//! (`agent.result`) is appended before any file is touched.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{to_canonical, HashDigest};
use crate::clock::{format_ts, parse_ts, Timestamp};
use crate::contracts::{
    check_idempotency, enforce_boundary, path_problem, validate_envelope, AgentOutputEnvelope,
    BoundaryContract, ContractError, EnvelopeAction, Idempotency, Violation, ViolationCode,
    AGENT_OUTPUT_SCHEMA, ROADMAP_SCHEMA,
};
use crate::event_store::{
    read_all, Action, AppendPermit, EventLog, EventRecord, NewEvent, Profile, ReadError, StoreError,
};
use crate::patch::apply_patch;
use crate::projection::{
    apply_event, project, InitPayload, ProjectSeed, ProjectionError, Roadmap, TaskEntry, TaskKind,
    TaskSeed, TaskState, VerifyStatus,
};
use crate::verify::{verify_with_permit, VerifyError, VerifyReport};

pub const DEFAULT_TTL_SECONDS: i64 = 3600;

/// `ORCHESTRATOR_CONTRACT.yaml`: pipeline settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorConfig {
    pub version: String,
    #[serde(default = "default_ttl")]
    pub ttl_seconds: i64,
    /// Append `orchestrator.view.mutate` after each accepted envelope.
    #[serde(default)]
    pub emit_view_mutate: bool,
}

fn default_ttl() -> i64 {
    DEFAULT_TTL_SECONDS
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            version: "0.3.0".into(),
            ttl_seconds: DEFAULT_TTL_SECONDS,
            emit_view_mutate: false,
        }
    }
}

impl OrchestratorConfig {
    pub fn from_yaml(text: &str) -> Result<Self, ContractError> {
        let config: OrchestratorConfig =
            serde_yaml::from_str(text).map_err(|e| ContractError::Parse(e.to_string()))?;
        if config.ttl_seconds <= 0 {
            return Err(ContractError::Invalid(
                "ttl_seconds must be positive".into(),
            ));
        }
        Ok(config)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes to YAML")
    }
}

/// Fixed paths of a project tree.
#[derive(Debug, Clone)]
pub struct ProjectLayout {
    root: PathBuf,
}

impl ProjectLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ProjectLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn roadmap_dir(&self) -> PathBuf {
        self.root.join(".roadmap")
    }

    pub fn log_path(&self) -> PathBuf {
        self.roadmap_dir().join("activity.jsonl")
    }

    pub fn roadmap_path(&self) -> PathBuf {
        self.roadmap_dir().join("roadmap.json")
    }

    pub fn agent_contract_path(&self) -> PathBuf {
        self.root.join("AGENT_CONTRACT.yaml")
    }

    pub fn orchestrator_contract_path(&self) -> PathBuf {
        self.root.join("ORCHESTRATOR_CONTRACT.yaml")
    }

    pub fn schemas_dir(&self) -> PathBuf {
        self.root.join("schemas")
    }

    pub fn is_initialized(&self) -> bool {
        self.log_path().exists()
    }

    /// Resolve a proposal path under the root. Rechecks the lexical rules and
    /// refuses any existing component that is a symlink or leaves the root.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, String> {
        if let Some(problem) = path_problem(rel) {
            return Err(format!("{rel:?}: {problem}"));
        }
        let root = fs::canonicalize(&self.root).map_err(|e| format!("project root: {e}"))?;
        let mut current = root.clone();
        for component in Path::new(rel).components() {
            let Component::Normal(part) = component else {
                return Err(format!("{rel:?}: unexpected path component"));
            };
            current.push(part);
            match fs::symlink_metadata(&current) {
                Ok(meta) if meta.file_type().is_symlink() => {
                    return Err(format!("{rel:?}: passes through a symlink"))
                }
                Ok(_) | Err(_) => {}
            }
        }
        if !current.starts_with(&root) {
            return Err(format!("{rel:?}: resolves outside the project root"));
        }
        Ok(current)
    }
}

/// Digest of every file under `root` except the log and the read-model.
/// Equal digests mean no effect touched the workspace.
pub fn workspace_tree_hash(root: &Path) -> io::Result<HashDigest> {
    fn walk(dir: &Path, rel: &str, out: &mut Vec<String>) -> io::Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let path = if rel.is_empty() {
                name
            } else {
                format!("{rel}/{name}")
            };
            if matches!(
                path.as_str(),
                ".roadmap/activity.jsonl" | ".roadmap/roadmap.json" | ".git" | "target"
            ) {
                continue;
            }
            let kind = entry.file_type()?;
            if kind.is_dir() {
                out.push(format!("{path}/"));
                walk(&entry.path(), &path, out)?;
            } else {
                let content = fs::read(entry.path())?;
                out.push(format!("{path}\0{}", HashDigest::of_bytes(&content)));
            }
        }
        Ok(())
    }
    let mut lines = Vec::new();
    walk(root, "", &mut lines)?;
    Ok(HashDigest::of_bytes(lines.join("\n").as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Open,
    Completed,
    TimedOut,
}

/// An attempt as reconstructed from the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attempt {
    pub attempt_id: String,
    pub task_id: String,
    pub agent: String,
    pub correlation_id: String,
    pub opened_at: String,
    pub opened_seq: u64,
    pub ttl_seconds: i64,
    pub status: AttemptStatus,
}

impl Attempt {
    pub fn expires_at(&self) -> Timestamp {
        parse_ts(&self.opened_at).expect("attempt timestamps come from a validated log")
            + chrono::Duration::seconds(self.ttl_seconds)
    }

    /// Expiry is strict: an attempt is still live at exactly `opened_at + ttl`.
    pub fn is_expired(&self, now: &Timestamp) -> bool {
        *now > self.expires_at()
    }
}

/// Attempts in creation order, with their status as of the end of `records`.
pub fn attempts(records: &[EventRecord], default_ttl: i64) -> Vec<Attempt> {
    let mut out: Vec<Attempt> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let Some(id) = r.attempt_id.clone() else {
            continue;
        };
        match r.action() {
            Some(Action::AttemptCreate) => {
                by_id.insert(id.clone(), out.len());
                out.push(Attempt {
                    attempt_id: id,
                    task_id: r.task_id.clone().unwrap_or_default(),
                    agent: r
                        .payload_str("agent")
                        .or(r.author())
                        .unwrap_or_default()
                        .to_owned(),
                    correlation_id: r.correlation_id.clone().unwrap_or_default(),
                    opened_at: r.ts.clone(),
                    opened_seq: r.event_seq,
                    ttl_seconds: r
                        .payload
                        .get("ttl_seconds")
                        .and_then(Value::as_i64)
                        .unwrap_or(default_ttl),
                    status: AttemptStatus::Open,
                });
            }
            Some(action @ (Action::AttemptTimeout | Action::AgentResult)) => {
                if let Some(&i) = by_id.get(&id) {
                    if out[i].status == AttemptStatus::Open {
                        out[i].status = if action == Action::AgentResult {
                            AttemptStatus::Completed
                        } else {
                            AttemptStatus::TimedOut
                        };
                    }
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EffectReceipt {
    pub path: String,
    pub bytes_written: u64,
    pub content_hash: HashDigest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutcome {
    pub kind: OutcomeKind,
    pub events_appended: Vec<u64>,
    pub receipts: Vec<EffectReceipt>,
    pub violations: Vec<Violation>,
    /// The emergency_patch task opened by an accepted `issue.report`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hotfix_task: Option<String>,
}

impl PipelineOutcome {
    pub fn is_accepted(&self) -> bool {
        self.kind == OutcomeKind::Accepted
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("project at {0} is already initialized")]
    AlreadyInitialized(PathBuf),
    #[error("no project at {0}: run init first")]
    NotInitialized(PathBuf),
    #[error("{operation} is not available in the {profile} profile")]
    WrongProfile {
        operation: &'static str,
        profile: Profile,
    },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} is already done")]
    AlreadyDone(String),
    #[error("task {task_id} depends on {dependency}, which is not done")]
    DependencyUnsatisfied { task_id: String, dependency: String },
    #[error("task {task_id} already has open attempt {attempt_id}")]
    AttemptConflict { task_id: String, attempt_id: String },
    #[error("{0:?} is not an agent identity (expected agent-*)")]
    InvalidAgent(String),
    #[error("run.end requires a prior verification")]
    VerifyRequired,
    #[error("effect on {path} failed after its intention was recorded: {reason}")]
    EffectFailed { path: String, reason: String },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Write through a sibling temp file and rename, so readers see old or new.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub type FileWriter = fn(&Path, &[u8]) -> io::Result<()>;

pub struct InitOptions {
    pub profile: Profile,
    pub project_name: String,
    pub audit_scope: String,
    pub run_id: Option<String>,
    pub version: Option<String>,
    pub tasks: Vec<TaskSeed>,
    pub now: Timestamp,
}

impl InitOptions {
    pub fn new(profile: Profile, project_name: impl Into<String>, now: Timestamp) -> Self {
        InitOptions {
            profile,
            project_name: project_name.into(),
            audit_scope: "project".into(),
            run_id: None,
            version: None,
            tasks: Vec::new(),
            now,
        }
    }

    pub fn tasks(mut self, tasks: Vec<TaskSeed>) -> Self {
        self.tasks = tasks;
        self
    }
}

pub struct Orchestrator {
    layout: ProjectLayout,
    log: EventLog,
    contract: BoundaryContract,
    config: OrchestratorConfig,
    writer: FileWriter,
}

/// Create the project tree and its single opening event.
pub fn init(root: &Path, opts: InitOptions) -> Result<Orchestrator, OrchestratorError> {
    let layout = ProjectLayout::new(root);
    if layout.is_initialized() {
        return Err(OrchestratorError::AlreadyInitialized(root.to_owned()));
    }
    let ts = format_ts(&opts.now);
    let payload = InitPayload {
        run_id: String::new(),
        project: ProjectSeed {
            name: opts.project_name,
            audit_scope: opts.audit_scope,
        },
        version: opts.version,
        tasks: opts.tasks,
    };
    let run_id = match opts.run_id {
        Some(id) => id,
        None => {
            let digest = to_canonical(&(&payload, &ts))
                .expect("init payload canonicalizes")
                .digest();
            format!("run-{}", &digest.as_str()[..12])
        }
    };
    let payload = InitPayload { run_id, ..payload };
    let event = NewEvent::system(opts.profile.initial_action(), &ts)
        .payload(serde_json::to_value(&payload).expect("init payload serializes"));
    // Fold first so a bad catalog never reaches disk.
    let state = apply_event(None, &event.clone().with_seq(0))?;

    for dir in [
        layout.roadmap_dir(),
        layout.roadmap_dir().join("specs"),
        layout.roadmap_dir().join("qa"),
    ] {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let src = root.join("src");
    fs::create_dir_all(&src).map_err(io_err(&src))?;
    let schemas = layout.schemas_dir();
    fs::create_dir_all(&schemas).map_err(io_err(&schemas))?;
    for (name, text) in [
        ("agent_output.schema.json", AGENT_OUTPUT_SCHEMA),
        ("roadmap.schema.json", ROADMAP_SCHEMA),
    ] {
        let path = schemas.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let contract_path = layout.agent_contract_path();
    let contract = if contract_path.exists() {
        BoundaryContract::load(&contract_path)?
    } else {
        let c = BoundaryContract::default();
        fs::write(&contract_path, c.to_yaml()).map_err(io_err(&contract_path))?;
        c
    };
    let config_path = layout.orchestrator_contract_path();
    let config = if config_path.exists() {
        let text = fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
        OrchestratorConfig::from_yaml(&text)?
    } else {
        let c = OrchestratorConfig::default();
        fs::write(&config_path, c.to_yaml()).map_err(io_err(&config_path))?;
        c
    };

    let log = EventLog::create(layout.log_path())?;
    let mut permit = log.lock()?;
    permit.append(event)?;
    drop(permit);
    let orch = Orchestrator {
        layout,
        log,
        contract,
        config,
        writer: write_atomically,
    };
    let mut state = state;
    orch.write_roadmap(&mut state)?;
    Ok(orch)
}

/// Mutable view of one transaction: the held permit and the projection it implies.
struct Txn<'a> {
    permit: AppendPermit,
    state: Roadmap,
    appended: Vec<u64>,
    orch: &'a Orchestrator,
}

impl Txn<'_> {
    fn append(&mut self, ev: NewEvent) -> Result<EventRecord, OrchestratorError> {
        let preview = ev.clone().with_seq(self.permit.next_seq());
        let next = apply_event(Some(&self.state), &preview)?;
        let record = self.permit.append(ev)?;
        self.state = next;
        self.appended.push(record.event_seq);
        Ok(record)
    }

    fn records(&self) -> &[EventRecord] {
        self.permit.records()
    }

    fn attempts(&self) -> Vec<Attempt> {
        attempts(self.records(), self.orch.config.ttl_seconds)
    }
}

/// What a rejection can say about the submission it refuses.
#[derive(Default)]
struct EnvelopeHints {
    actor: Option<String>,
    task_id: Option<String>,
    attempt_id: Option<String>,
    correlation_id: Option<String>,
    idempotency_key: Option<String>,
}

impl EnvelopeHints {
    fn from_raw(raw: &[u8]) -> Self {
        let doc: Value = serde_json::from_slice(raw).unwrap_or(Value::Null);
        let s = |k: &str| {
            doc.get(k)
                .and_then(Value::as_str)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
        };
        EnvelopeHints {
            actor: s("actor"),
            task_id: s("task_id"),
            attempt_id: s("attempt_id"),
            correlation_id: s("correlation_id"),
            idempotency_key: s("idempotency_key"),
        }
    }
}

type Admitted = (AgentOutputEnvelope, Vec<PlannedWrite>);
/// The failing stage and its violations.
type Refusal = (&'static str, Vec<Violation>);

struct PlannedWrite {
    rel: String,
    abs: PathBuf,
    content: String,
}

impl Orchestrator {
    pub fn open(root: &Path) -> Result<Orchestrator, OrchestratorError> {
        let layout = ProjectLayout::new(root);
        if !layout.is_initialized() {
            return Err(OrchestratorError::NotInitialized(root.to_owned()));
        }
        let contract_path = layout.agent_contract_path();
        let contract = if contract_path.exists() {
            BoundaryContract::load(&contract_path)?
        } else {
            BoundaryContract::default()
        };
        let config_path = layout.orchestrator_contract_path();
        let config = if config_path.exists() {
            let text = fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
            OrchestratorConfig::from_yaml(&text)?
        } else {
            OrchestratorConfig::default()
        };
        let log = EventLog::new(layout.log_path());
        Ok(Orchestrator {
            layout,
            log,
            contract,
            config,
            writer: write_atomically,
        })
    }

    /// Replace the function used to write effect files.
    pub fn with_writer(mut self, writer: FileWriter) -> Self {
        self.writer = writer;
        self
    }

    pub fn layout(&self) -> &ProjectLayout {
        &self.layout
    }

    pub fn contract(&self) -> &BoundaryContract {
        &self.contract
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn records(&self) -> Result<Vec<EventRecord>, OrchestratorError> {
        Ok(read_all(self.log.path())?)
    }

    /// Fold the log as it stands, without taking the permit.
    pub fn roadmap(&self) -> Result<Roadmap, OrchestratorError> {
        Ok(project(&self.records()?)?)
    }

    pub fn attempts(&self) -> Result<Vec<Attempt>, OrchestratorError> {
        Ok(attempts(&self.records()?, self.config.ttl_seconds))
    }

    fn write_roadmap(&self, state: &mut Roadmap) -> Result<(), OrchestratorError> {
        state.seal().map_err(ProjectionError::from)?;
        let bytes = state.to_canonical().map_err(ProjectionError::from)?;
        let path = self.layout.roadmap_path();
        write_atomically(&path, bytes.as_bytes()).map_err(io_err(&path))
    }

    /// Run `f` under the permit. Whatever `f` appended is reprojected into
    /// `roadmap.json`, even when `f` fails part way.
    fn transact<T>(
        &self,
        f: impl FnOnce(&mut Txn) -> Result<T, OrchestratorError>,
    ) -> Result<T, OrchestratorError> {
        let permit = self.log.lock()?;
        let state = project(permit.records())?;
        let mut txn = Txn {
            permit,
            state,
            appended: Vec::new(),
            orch: self,
        };
        let result = f(&mut txn);
        if !txn.appended.is_empty() {
            self.write_roadmap(&mut txn.state)?;
        }
        result
    }

    fn require_profile(
        &self,
        state: &Roadmap,
        want: Profile,
        operation: &'static str,
    ) -> Result<(), OrchestratorError> {
        if state.profile() == want {
            Ok(())
        } else {
            Err(OrchestratorError::WrongProfile {
                operation,
                profile: state.profile(),
            })
        }
    }

    /// Open an attempt for `agent` on `task_id` and dispatch it.
    pub fn dispatch(
        &self,
        task_id: &str,
        agent: &str,
        now: &Timestamp,
    ) -> Result<Attempt, OrchestratorError> {
        if !agent.starts_with("agent-") {
            return Err(OrchestratorError::InvalidAgent(agent.to_owned()));
        }
        self.transact(|txn| {
            self.require_profile(&txn.state, Profile::Full, "dispatch")?;
            let task = txn
                .state
                .task(task_id)
                .ok_or_else(|| OrchestratorError::UnknownTask(task_id.into()))?;
            if task.state == TaskState::Done {
                return Err(OrchestratorError::AlreadyDone(task_id.into()));
            }
            txn.state.dependencies_done(task).map_err(|dependency| {
                OrchestratorError::DependencyUnsatisfied {
                    task_id: task_id.into(),
                    dependency,
                }
            })?;
            let all = txn.attempts();
            if let Some(open) = all
                .iter()
                .find(|a| a.task_id == task_id && a.status == AttemptStatus::Open)
            {
                return Err(OrchestratorError::AttemptConflict {
                    task_id: task_id.into(),
                    attempt_id: open.attempt_id.clone(),
                });
            }
            let n = all.iter().filter(|a| a.task_id == task_id).count() + 1;
            let attempt_id = format!("att-{task_id}-{n}");
            let correlation_id = format!("cor-{task_id}-{n}");
            let ts = format_ts(now);
            let ttl = self.config.ttl_seconds;
            let base = |action| {
                NewEvent::system(action, &ts)
                    .agent_id(agent)
                    .task(task_id)
                    .attempt(&attempt_id)
                    .correlation(&correlation_id)
            };
            let created = txn.append(
                base(Action::AttemptCreate).payload(json!({"agent": agent, "ttl_seconds": ttl})),
            )?;
            txn.append(base(Action::OrchestratorDispatch).payload(json!({"agent": agent})))?;
            Ok(Attempt {
                attempt_id,
                task_id: task_id.into(),
                agent: agent.into(),
                correlation_id,
                opened_at: ts.clone(),
                opened_seq: created.event_seq,
                ttl_seconds: ttl,
                status: AttemptStatus::Open,
            })
        })
    }

    /// Validate one raw agent submission and either reject it with a single
    /// `output.rejected` or commit its intention, effects and task update.
    pub fn handle_agent_output(
        &self,
        raw: &[u8],
        now: &Timestamp,
    ) -> Result<PipelineOutcome, OrchestratorError> {
        self.transact(|txn| {
            self.require_profile(&txn.state, Profile::Full, "agent submission")?;
            match self.admit(txn, raw, now) {
                Ok((env, plan)) => self.commit(txn, env, plan, now),
                Err((stage, violations)) => self.reject(txn, raw, stage, violations, now),
            }
        })
    }

    /// Stages up to and including conflict detection. Nothing is written.
    fn admit(&self, txn: &Txn, raw: &[u8], now: &Timestamp) -> Result<Admitted, Refusal> {
        let env = validate_envelope(raw).map_err(|v| {
            let stage = if v.iter().any(|x| x.code == ViolationCode::Authority) {
                "authority"
            } else {
                "schema"
            };
            (stage, v)
        })?;
        let all = txn.attempts();
        let attempt = all.iter().find(|a| a.attempt_id == env.attempt_id);

        // authority: the submitting agent must own the attempt it names
        if env.action == EnvelopeAction::AgentResult {
            if let Some(a) = attempt.filter(|a| a.agent != env.actor) {
                let msg = format!(
                    "attempt {} belongs to {}, not {}",
                    a.attempt_id, a.agent, env.actor
                );
                return Err((
                    "authority",
                    vec![Violation::new(ViolationCode::Authority, "/actor", msg)],
                ));
            }
        }

        // freshness
        let task: &TaskEntry = match env.action {
            EnvelopeAction::AgentResult => {
                let stale = |pointer: &str, msg: String| {
                    (
                        "freshness",
                        vec![Violation::new(ViolationCode::StaleAttempt, pointer, msg)],
                    )
                };
                let Some(a) = attempt else {
                    return Err(stale(
                        "/attempt_id",
                        format!("no attempt {}", env.attempt_id),
                    ));
                };
                match a.status {
                    // A retry of the accepted envelope is reported as a replay below.
                    AttemptStatus::Completed
                        if check_idempotency(&env.idempotency_key, txn.records())
                            == Idempotency::Fresh =>
                    {
                        return Err(stale(
                            "/attempt_id",
                            format!("attempt {} already completed", a.attempt_id),
                        ))
                    }
                    AttemptStatus::Completed => {}
                    AttemptStatus::TimedOut => {
                        return Err(stale(
                            "/attempt_id",
                            format!("attempt {} timed out", a.attempt_id),
                        ))
                    }
                    AttemptStatus::Open if a.is_expired(now) => {
                        return Err(stale(
                            "/attempt_id",
                            format!(
                                "attempt {} expired at {}",
                                a.attempt_id,
                                format_ts(&a.expires_at())
                            ),
                        ))
                    }
                    AttemptStatus::Open => {}
                }
                if env.correlation_id != a.correlation_id {
                    return Err(stale(
                        "/correlation_id",
                        format!(
                            "attempt {} carries correlation {}",
                            a.attempt_id, a.correlation_id
                        ),
                    ));
                }
                txn.state
                    .task(&a.task_id)
                    .expect("attempts reference catalog tasks")
            }
            EnvelopeAction::IssueReport => match txn.state.task(&env.task_id) {
                Some(t) => t,
                None => {
                    let v = Violation::new(
                        ViolationCode::BoundaryKind,
                        "/task_id",
                        format!("unknown task {}", env.task_id),
                    );
                    return Err(("boundary", vec![v]));
                }
            },
        };

        // boundary
        enforce_boundary(&env, task, &self.contract).map_err(|v| ("boundary", v))?;
        if env.action == EnvelopeAction::IssueReport && !env.payload.proposals().is_empty() {
            let v = Violation::new(
                ViolationCode::BoundaryKind,
                "/payload/proposals",
                "issue.report cannot carry proposals",
            );
            return Err(("boundary", vec![v]));
        }

        // idempotency
        if let Idempotency::ReplayOf(seq) = check_idempotency(&env.idempotency_key, txn.records()) {
            let v = Violation::new(
                ViolationCode::IdempotencyReplay,
                "/idempotency_key",
                format!("key already accepted at event_seq {seq}"),
            );
            return Err(("idempotency", vec![v]));
        }

        // conflict: a path written by another attempt since this one opened,
        // or a patch that no longer applies to the current file
        let opened_seq = attempt.map_or(u64::MAX, |a| a.opened_seq);
        let mut violations = Vec::new();
        let mut plan: Vec<PlannedWrite> = Vec::new();
        for (i, p) in env.payload.proposals().iter().enumerate() {
            let pointer = format!("/payload/proposals/{i}/path");
            let clash = txn.records().iter().find(|r| {
                r.event_seq > opened_seq
                    && r.action() == Some(Action::OrchestratorFileWrite)
                    && r.attempt_id.as_deref() != Some(env.attempt_id.as_str())
                    && r.payload_str("path")
                        .is_some_and(|w| paths_overlap(w, &p.path))
            });
            if let Some(r) = clash {
                violations.push(Violation::new(
                    ViolationCode::Conflict,
                    pointer,
                    format!(
                        "{} was written by attempt {} at event_seq {}",
                        p.path,
                        r.attempt_id.as_deref().unwrap_or("?"),
                        r.event_seq
                    ),
                ));
                continue;
            }
            let abs = match self.layout.resolve(&p.path) {
                Ok(abs) => abs,
                Err(reason) => {
                    violations.push(Violation::new(ViolationCode::BoundaryPath, pointer, reason));
                    continue;
                }
            };
            let base = match plan.iter().rev().find(|w| w.rel == p.path) {
                Some(w) => Some(w.content.clone()),
                None => match fs::read_to_string(&abs) {
                    Ok(s) => Some(s),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => None,
                    Err(e) => {
                        violations.push(Violation::new(
                            ViolationCode::Conflict,
                            pointer,
                            format!("cannot read {}: {e}", p.path),
                        ));
                        continue;
                    }
                },
            };
            match apply_patch(base.as_deref(), &p.patch) {
                Ok(content) => plan.push(PlannedWrite {
                    rel: p.path.clone(),
                    abs,
                    content,
                }),
                Err(e) => violations.push(Violation::new(
                    ViolationCode::Conflict,
                    format!("/payload/proposals/{i}/patch"),
                    e.to_string(),
                )),
            }
        }
        if !violations.is_empty() {
            return Err(("conflict", violations));
        }
        Ok((env, plan))
    }

    fn reject(
        &self,
        txn: &mut Txn,
        raw: &[u8],
        stage: &str,
        violations: Vec<Violation>,
        now: &Timestamp,
    ) -> Result<PipelineOutcome, OrchestratorError> {
        let hints = EnvelopeHints::from_raw(raw);
        let mut ev = NewEvent::system(Action::OutputRejected, format_ts(now)).payload(json!({
            "stage": stage,
            "violations": violations,
            "envelope_sha256": HashDigest::of_bytes(raw),
        }));
        ev.agent_id = hints.actor;
        ev.task_id = hints.task_id;
        ev.attempt_id = hints.attempt_id;
        ev.correlation_id = hints.correlation_id;
        ev.idempotency_key = hints.idempotency_key;
        txn.append(ev)?;
        Ok(PipelineOutcome {
            kind: OutcomeKind::Rejected,
            events_appended: txn.appended.clone(),
            receipts: Vec::new(),
            violations,
            hotfix_task: None,
        })
    }

    fn commit(
        &self,
        txn: &mut Txn,
        env: AgentOutputEnvelope,
        plan: Vec<PlannedWrite>,
        now: &Timestamp,
    ) -> Result<PipelineOutcome, OrchestratorError> {
        let ts = format_ts(now);
        let payload = serde_json::to_value(&env.payload).expect("envelope payload serializes");
        let intention = NewEvent::new(env.action.as_action(), &ts)
            .actor(&env.actor)
            .task(&env.task_id)
            .attempt(&env.attempt_id)
            .correlation(&env.correlation_id)
            .idempotency_key(&env.idempotency_key)
            .payload(payload);
        txn.append(intention)?;

        if env.action == EnvelopeAction::IssueReport {
            let hotfix = self.open_hotfix(txn, &env, &ts)?;
            return Ok(PipelineOutcome {
                kind: OutcomeKind::Accepted,
                events_appended: txn.appended.clone(),
                receipts: Vec::new(),
                violations: Vec::new(),
                hotfix_task: Some(hotfix),
            });
        }

        let mut receipts = Vec::new();
        for w in &plan {
            let base = NewEvent::system(Action::OrchestratorFileWrite, &ts)
                .task(&env.task_id)
                .attempt(&env.attempt_id)
                .correlation(&env.correlation_id);
            if let Err(e) = (self.writer)(&w.abs, w.content.as_bytes()) {
                txn.append(
                    base.payload(json!({"path": w.rel, "ok": false, "error": e.to_string()})),
                )?;
                return Err(OrchestratorError::EffectFailed {
                    path: w.rel.clone(),
                    reason: e.to_string(),
                });
            }
            let receipt = EffectReceipt {
                path: w.rel.clone(),
                bytes_written: w.content.len() as u64,
                content_hash: HashDigest::of_bytes(w.content.as_bytes()),
            };
            txn.append(base.payload(json!({
                "path": receipt.path,
                "ok": true,
                "bytes_written": receipt.bytes_written,
                "content_sha256": receipt.content_hash,
            })))?;
            receipts.push(receipt);
        }
        let mut files: Vec<String> = plan.iter().map(|w| w.rel.clone()).collect();
        files.sort();
        files.dedup();
        txn.append(
            NewEvent::system(Action::TaskUpdate, &ts)
                .task(&env.task_id)
                .attempt(&env.attempt_id)
                .correlation(&env.correlation_id)
                .payload(json!({"state": "done", "files": files})),
        )?;
        if self.config.emit_view_mutate {
            txn.append(
                NewEvent::system(Action::OrchestratorViewMutate, &ts)
                    .correlation(&env.correlation_id)
                    .payload(json!({"view": "roadmap.json"})),
            )?;
        }
        Ok(PipelineOutcome {
            kind: OutcomeKind::Accepted,
            events_appended: txn.appended.clone(),
            receipts,
            violations: Vec::new(),
            hotfix_task: None,
        })
    }

    fn open_hotfix(
        &self,
        txn: &mut Txn,
        env: &AgentOutputEnvelope,
        ts: &str,
    ) -> Result<String, OrchestratorError> {
        let prefix = format!("{}-HF", env.task_id);
        let n = txn
            .state
            .tasks
            .iter()
            .filter(|t| t.task_id.starts_with(&prefix))
            .count()
            + 1;
        let id = format!("{prefix}{n}");
        let title = env
            .payload
            .issue
            .as_ref()
            .map_or("issue", |i| i.title.as_str());
        let seed = TaskSeed {
            task_id: id.clone(),
            kind: TaskKind::EmergencyPatch,
            title: format!("Hotfix: {title}"),
            depends_on: vec![env.task_id.clone()],
            files: Vec::new(),
            phase_id: None,
            state: None,
        };
        txn.append(
            NewEvent::system(Action::TaskCreate, ts)
                .task(&id)
                .correlation(&env.correlation_id)
                .payload(serde_json::to_value(&seed).expect("seed serializes")),
        )?;
        Ok(id)
    }

    /// Submit a parsed `issue.report` envelope. Fails with `UnknownTask`
    /// before anything is appended when the reported task does not exist.
    pub fn report_issue(
        &self,
        env: &AgentOutputEnvelope,
        now: &Timestamp,
    ) -> Result<PipelineOutcome, OrchestratorError> {
        if self.roadmap()?.task(&env.task_id).is_none() {
            return Err(OrchestratorError::UnknownTask(env.task_id.clone()));
        }
        let raw = serde_json::to_vec(env).expect("envelope serializes");
        self.handle_agent_output(&raw, now)
    }

    /// Time out every open attempt whose TTL has strictly elapsed.
    pub fn expire_attempts(&self, now: &Timestamp) -> Result<Vec<EventRecord>, OrchestratorError> {
        self.transact(|txn| {
            let expired: Vec<Attempt> = txn
                .attempts()
                .into_iter()
                .filter(|a| a.status == AttemptStatus::Open && a.is_expired(now))
                .collect();
            let ts = format_ts(now);
            let mut out = Vec::new();
            for a in expired {
                out.push(
                    txn.append(
                        NewEvent::system(Action::AttemptTimeout, &ts)
                            .agent_id(&a.agent)
                            .task(&a.task_id)
                            .attempt(&a.attempt_id)
                            .correlation(&a.correlation_id)
                            .payload(
                                json!({"agent": a.agent, "expired_at": format_ts(&a.expires_at())}),
                            ),
                    )?,
                );
            }
            Ok(out)
        })
    }

    /// Replay and compare, record the verify events (full profile, open run),
    /// then rewrite `roadmap.json`: fully on ok, only `run.verify_status` otherwise.
    pub fn verify(&self, now: &Timestamp) -> Result<VerifyReport, OrchestratorError> {
        let roadmap_path = self.layout.roadmap_path();
        let stored = fs::read(&roadmap_path).map_err(io_err(&roadmap_path))?;
        let mut permit = match self.log.lock() {
            Ok(p) => p,
            Err(StoreError::Corrupted(c)) => {
                let report = crate::verify::verify_bytes(
                    &fs::read(self.log.path()).map_err(io_err(self.log.path()))?,
                    &stored,
                );
                debug_assert_eq!(report.corruption.as_ref().map(|r| r.kind), Some(c.kind));
                self.mark_stored_status(&stored, VerifyStatus::Corrupted)?;
                return Ok(report);
            }
            Err(e) => return Err(e.into()),
        };
        let (report, state) = verify_with_permit(&mut permit, &stored, now)?;
        drop(permit);
        match (report.verify_status, state) {
            (VerifyStatus::Ok, Some(mut state)) => self.write_roadmap(&mut state)?,
            (VerifyStatus::Ok, None) => {}
            (status, _) => self.mark_stored_status(&stored, status)?,
        }
        Ok(report)
    }

    fn mark_stored_status(
        &self,
        stored: &[u8],
        status: VerifyStatus,
    ) -> Result<(), OrchestratorError> {
        let Ok(mut doc) = serde_json::from_slice::<Value>(stored) else {
            return Ok(());
        };
        let Some(run) = doc.get_mut("run").and_then(Value::as_object_mut) else {
            return Ok(());
        };
        run.insert("verify_status".into(), json!(status.as_str()));
        let Ok(bytes) = crate::canonical::canonicalize(&doc) else {
            return Ok(());
        };
        let path = self.layout.roadmap_path();
        write_atomically(&path, bytes.as_bytes()).map_err(io_err(&path))
    }

    /// Close the run: success iff every task is done and the last
    /// verification passed.
    pub fn end_run(&self, now: &Timestamp) -> Result<EventRecord, OrchestratorError> {
        self.transact(|txn| {
            self.require_profile(&txn.state, Profile::Full, "run.end")?;
            let verified = txn
                .records()
                .iter()
                .any(|r| matches!(r.action(), Some(Action::VerifyOk | Action::VerifyFail)));
            if !verified {
                return Err(OrchestratorError::VerifyRequired);
            }
            let success = txn.state.all_done() && txn.state.run.verify_status == VerifyStatus::Ok;
            let status = if success { "success" } else { "failed" };
            let done = txn.state.count_in(TaskState::Done);
            let total = txn.state.tasks.len();
            txn.append(
                NewEvent::system(Action::RunEnd, format_ts(now))
                    .payload(json!({"status": status, "tasks_done": done, "tasks_total": total})),
            )
        })
    }

    /// Simplified profile: backlog → ready.
    pub fn promote(
        &self,
        task_id: &str,
        now: &Timestamp,
    ) -> Result<EventRecord, OrchestratorError> {
        self.simplified(
            NewEvent::new(Action::Promote, format_ts(now)).task(task_id),
            "promote",
        )
    }

    /// Simplified profile: attribute a ready task to `agent`.
    pub fn claim(
        &self,
        task_id: &str,
        agent: &str,
        now: &Timestamp,
    ) -> Result<EventRecord, OrchestratorError> {
        self.simplified(
            NewEvent::new(Action::Claim, format_ts(now))
                .task(task_id)
                .agent_id(agent),
            "claim",
        )
    }

    /// Simplified profile: ready → done with acceptance results.
    pub fn complete(
        &self,
        task_id: &str,
        agent: &str,
        acceptance: BTreeMap<String, bool>,
        now: &Timestamp,
    ) -> Result<EventRecord, OrchestratorError> {
        let ev = NewEvent::new(Action::Complete, format_ts(now))
            .task(task_id)
            .agent_id(agent)
            .acceptance(acceptance);
        self.simplified(ev, "complete")
    }

    pub fn phase_complete(
        &self,
        phase_id: &str,
        now: &Timestamp,
    ) -> Result<EventRecord, OrchestratorError> {
        let ev = NewEvent::new(Action::PhaseComplete, format_ts(now))
            .payload(json!({"phase_id": phase_id}));
        self.simplified(ev, "phase.complete")
    }

    /// Append several simplified-profile events under one permit hold, so
    /// they receive consecutive sequence numbers.
    pub fn append_batch(
        &self,
        events: Vec<NewEvent>,
    ) -> Result<Vec<EventRecord>, OrchestratorError> {
        self.transact(|txn| {
            self.require_profile(&txn.state, Profile::Simplified, "batch append")?;
            events.into_iter().map(|ev| txn.append(ev)).collect()
        })
    }

    fn simplified(
        &self,
        ev: NewEvent,
        operation: &'static str,
    ) -> Result<EventRecord, OrchestratorError> {
        self.transact(|txn| {
            self.require_profile(&txn.state, Profile::Simplified, operation)?;
            if let Some(id) = ev.task_id.as_deref() {
                if txn.state.task(id).is_none() {
                    return Err(OrchestratorError::UnknownTask(id.into()));
                }
            }
            txn.append(ev)
        })
    }
}

fn paths_overlap(a: &str, b: &str) -> bool {
    let under =
        |x: &str, y: &str| x.len() > y.len() && x.starts_with(y) && x.as_bytes()[y.len()] == b'/';
    a == b || under(a, b) || under(b, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_is_path_prefix_not_string_prefix() {
        assert!(paths_overlap("src/a", "src/a"));
        assert!(paths_overlap("src/a", "src/a/b"));
        assert!(!paths_overlap("src/a", "src/ab"));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = OrchestratorConfig::from_yaml("version: '0.3.0'\n").unwrap();
        assert_eq!(c, OrchestratorConfig::default());
        assert!(OrchestratorConfig::from_yaml("version: '0.3.0'\nttl_seconds: 0\n").is_err());
        assert!(OrchestratorConfig::from_yaml("version: '0.3.0'\nstages: []\n").is_err());
    }

    #[test]
    fn expiry_is_strict() {
        let a = Attempt {
            attempt_id: "att-T-1-1".into(),
            task_id: "T-1".into(),
            agent: "agent-a".into(),
            correlation_id: "cor-T-1-1".into(),
            opened_at: "2026-01-01T00:00:00Z".into(),
            opened_seq: 1,
            ttl_seconds: 3600,
            status: AttemptStatus::Open,
        };
        assert!(!a.is_expired(&parse_ts("2026-01-01T01:00:00Z").unwrap()));
        assert!(a.is_expired(&parse_ts("2026-01-01T01:00:01Z").unwrap()));
    }
}
