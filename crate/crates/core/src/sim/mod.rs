//! Deterministic multi-agent simulation harness.
//!
//! Scripted agents drive a real [`Orchestrator`] over a project tree on disk.
//! Timestamps come from a [`ScriptedClock`] and every scheduling choice from a
//! ChaCha stream seeded by the scenario, so a scenario fixes the log octets.

mod cases;
mod walk;

pub use cases::*;
pub use walk::{random_catalog, random_walk, regression_events};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::canonical::{to_canonical, CanonicalError, HashDigest};
use crate::clock::{parse_ts_strict, ScriptedClock, Timestamp, TimestampError};
use crate::event_store::{tail_verify_counts, Action, EventRecord, NewEvent, Profile};
use crate::orchestrator::{
    init, workspace_tree_hash, Attempt, AttemptStatus, InitOptions, Orchestrator, OrchestratorError,
};
use crate::projection::{RunStatus, TaskEntry, TaskKind, TaskSeed, TaskState, VerifyStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Compliant,
    /// Adds an undeclared top-level field.
    SchemaViolator,
    /// Targets a path that climbs out of the workspace.
    PathEscaper,
    /// Reuses the newest accepted idempotency key, or an empty one if none exists.
    IdempotencyReplayer,
    /// Sits on its attempt until the TTL has lapsed, then submits.
    StaleSubmitter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    pub agent_id: String,
    #[serde(default)]
    pub behavior: Behavior,
    /// Maximum number of submissions (full profile) or claims (simplified).
    pub task_quota: usize,
    /// Task kinds the agent accepts; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kinds: Vec<TaskKind>,
    /// Tasks reserved for this agent; empty means any task of an accepted kind.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<String>,
}

impl AgentScript {
    fn accepts(&self, task: &TaskEntry, reserved: &BTreeSet<&str>) -> bool {
        let kind_ok = self.kinds.is_empty() || self.kinds.contains(&task.kind);
        let task_ok = if self.tasks.is_empty() {
            !reserved.contains(task.task_id.as_str())
        } else {
            self.tasks.contains(&task.task_id)
        };
        kind_ok && task_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    /// RFC 3339 with an explicit offset.
    pub start: String,
    /// Seconds added before every timestamped operation.
    #[serde(default = "default_step")]
    pub step_seconds: i64,
}

fn default_step() -> i64 {
    60
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinCatalog {
    Cs1,
    Cs2,
}

impl BuiltinCatalog {
    pub fn tasks(self) -> Vec<TaskSeed> {
        match self {
            BuiltinCatalog::Cs1 => cs1_catalog(),
            BuiltinCatalog::Cs2 => cs2_catalog(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub profile: Profile,
    #[serde(default)]
    pub seed: u64,
    pub clock: ClockConfig,
    pub project: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<BuiltinCatalog>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<TaskSeed>,
    pub agents: Vec<AgentScript>,
    /// Tasks that may be promoted but are never worked on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hold: Vec<String>,
    /// Tasks that are never touched at all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    /// Finish without error when tasks remain unfinished at quiescence.
    #[serde(default)]
    pub allow_incomplete: bool,
    /// Full profile: append verify events. Simplified: verification is read-only.
    #[serde(default = "yes")]
    pub verify: bool,
    /// Full profile only: close the run after verification.
    #[serde(default = "yes")]
    pub end_run: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("scenario stuck: no progress possible for {blocked:?}")]
    Stuck { blocked: Vec<String> },
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Timestamp(#[from] TimestampError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_owned(),
        source,
    }
}

impl ScenarioConfig {
    pub fn from_yaml(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_yaml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scenario serializes")
    }

    /// The task catalog: inline tasks or a builtin one, never both.
    pub fn catalog_tasks(&self) -> Vec<TaskSeed> {
        match self.catalog {
            Some(c) => c.tasks(),
            None => self.tasks.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        let name_ok = |s: &str| {
            !s.is_empty()
                && s.bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
        };
        if !name_ok(&self.name) || self.name.starts_with('.') {
            return bad(format!("name {:?} must be a plain file stem", self.name));
        }
        if self.catalog.is_some() && !self.tasks.is_empty() {
            return bad("give either catalog or tasks, not both".into());
        }
        let tasks = self.catalog_tasks();
        if tasks.is_empty() {
            return bad("the task catalog is empty".into());
        }
        parse_ts_strict(&self.clock.start)?;
        if self.clock.step_seconds < 0 {
            return bad("clock.step_seconds must not be negative".into());
        }
        if self.agents.is_empty() {
            return bad("at least one agent is required".into());
        }
        let ids: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
        let mut agents = BTreeSet::new();
        for a in &self.agents {
            if !agents.insert(a.agent_id.as_str()) {
                return bad(format!("agent {} is listed twice", a.agent_id));
            }
            match self.profile {
                Profile::Full if !a.agent_id.starts_with("agent-") => {
                    return bad(format!(
                        "full-profile agent {} must match ^agent-",
                        a.agent_id
                    ));
                }
                Profile::Simplified if a.behavior != Behavior::Compliant => {
                    return bad(format!(
                        "agent {}: the simplified profile has no envelopes to violate",
                        a.agent_id
                    ));
                }
                _ => {}
            }
        }
        let named = self
            .agents
            .iter()
            .flat_map(|a| &a.tasks)
            .chain(&self.hold)
            .chain(&self.stop);
        if let Some(unknown) = named.into_iter().find(|t| !ids.contains(t.as_str())) {
            return bad(format!("unknown task {unknown}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub profile: Profile,
    pub seed: u64,
    pub event_counts: BTreeMap<String, usize>,
    pub wall_events: usize,
    pub submissions: usize,
    pub rejected_count: usize,
    pub rejection_codes: BTreeMap<String, usize>,
    /// Rejected submissions after which the workspace tree hash had changed.
    pub rejections_with_side_effects: usize,
    pub final_state_index: BTreeMap<String, usize>,
    pub phases_complete: usize,
    pub phases_total: usize,
    pub run_status: RunStatus,
    pub verify_status: VerifyStatus,
    pub projection_hash: HashDigest,
    pub workspace_hash: HashDigest,
    pub log_bytes: u64,
}

impl RunReport {
    pub fn to_canonical(&self) -> Result<Vec<u8>, CanonicalError> {
        Ok(to_canonical(self)?.into_bytes())
    }

    /// Write the report to `<dir>/<scenario>.json` and return the path.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf, SimError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(format!("{}.json", self.scenario));
        fs::write(&path, self.to_canonical()?).map_err(io_err(&path))?;
        Ok(path)
    }
}

struct Counters {
    submissions: usize,
    rejected: usize,
    codes: BTreeMap<String, usize>,
    side_effects: usize,
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    orch: Orchestrator,
    clock: ScriptedClock,
    rng: ChaCha8Rng,
    quota: Vec<usize>,
    accepted_keys: Vec<String>,
    reserved: BTreeSet<&'a str>,
    stats: Counters,
}

/// Initialize `root` and drive the scenario to quiescence.
pub fn run_scenario(cfg: &ScenarioConfig, root: &Path) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let mut clock = ScriptedClock::starting_at(&cfg.clock.start)?;
    let mut opts =
        InitOptions::new(cfg.profile, &cfg.project, clock.now()).tasks(cfg.catalog_tasks());
    opts.run_id = Some(
        cfg.run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", cfg.name)),
    );
    let orch = init(root, opts)?;
    clock.advance(cfg.clock.step_seconds);
    let mut sim = Simulation {
        cfg,
        orch,
        clock,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        quota: cfg.agents.iter().map(|a| a.task_quota).collect(),
        accepted_keys: Vec::new(),
        reserved: cfg
            .agents
            .iter()
            .flat_map(|a| &a.tasks)
            .map(String::as_str)
            .collect(),
        stats: Counters {
            submissions: 0,
            rejected: 0,
            codes: BTreeMap::new(),
            side_effects: 0,
        },
    };
    match cfg.profile {
        Profile::Full => sim.run_full()?,
        Profile::Simplified => sim.run_simplified()?,
    }
    sim.finish()
}

impl Simulation<'_> {
    fn tick(&mut self) -> Timestamp {
        let now = self.clock.now();
        self.clock.advance(self.cfg.clock.step_seconds);
        now
    }

    fn idle(&self, task: &str) -> bool {
        !self.cfg.stop.iter().any(|t| t == task) && !self.cfg.hold.iter().any(|t| t == task)
    }

    fn pick_agent(&mut self, task: &TaskEntry, busy: &[bool]) -> Option<usize> {
        let eligible: Vec<usize> = (0..self.cfg.agents.len())
            .filter(|&i| {
                !busy[i] && self.quota[i] > 0 && self.cfg.agents[i].accepts(task, &self.reserved)
            })
            .collect();
        match eligible.len() {
            0 => None,
            n => Some(eligible[self.rng.gen_range(0..n as u32) as usize]),
        }
    }

    /// Rounds of dispatch-then-submit until no task can be dispatched.
    fn run_full(&mut self) -> Result<(), SimError> {
        let ttl = self.orch.config().ttl_seconds;
        loop {
            let roadmap = self.orch.roadmap()?;
            let open: BTreeSet<String> = self
                .orch
                .attempts()?
                .into_iter()
                .filter(|a| a.status == AttemptStatus::Open)
                .map(|a| a.task_id)
                .collect();
            let mut busy = vec![false; self.cfg.agents.len()];
            let mut batch: Vec<(usize, Attempt, TaskEntry)> = Vec::new();
            for task in &roadmap.tasks {
                let dispatchable = matches!(task.state, TaskState::Todo | TaskState::Blocked)
                    && self.idle(&task.task_id)
                    && !open.contains(&task.task_id)
                    && roadmap.dependencies_done(task).is_ok();
                if !dispatchable {
                    continue;
                }
                let Some(agent) = self.pick_agent(task, &busy) else {
                    continue;
                };
                busy[agent] = true;
                let now = self.tick();
                let attempt =
                    self.orch
                        .dispatch(&task.task_id, &self.cfg.agents[agent].agent_id, &now)?;
                batch.push((agent, attempt, task.clone()));
            }
            if batch.is_empty() {
                return Ok(());
            }
            batch.shuffle(&mut self.rng);
            // Late submitters go last so their clock jump cannot age anyone else's attempt.
            batch.sort_by_key(|(agent, ..)| {
                self.cfg.agents[*agent].behavior == Behavior::StaleSubmitter
            });
            for (agent, attempt, task) in batch {
                self.submit(agent, &attempt, &task, ttl)?;
            }
            // Attempts left open by rejected submissions lapse before the next round.
            if self
                .orch
                .attempts()?
                .iter()
                .any(|a| a.status == AttemptStatus::Open)
            {
                self.clock.advance(ttl + 1);
                let now = self.tick();
                self.orch.expire_attempts(&now)?;
            }
        }
    }

    fn submit(
        &mut self,
        agent: usize,
        attempt: &Attempt,
        task: &TaskEntry,
        ttl: i64,
    ) -> Result<(), SimError> {
        let script = &self.cfg.agents[agent];
        let root = self.orch.layout().root().to_owned();
        let before = workspace_tree_hash(&root).map_err(io_err(&root))?;
        let (raw, key) = envelope(script, attempt, task, self.accepted_keys.last());
        if script.behavior == Behavior::StaleSubmitter {
            self.clock.advance(ttl + 1);
        }
        let now = self.tick();
        let outcome = self.orch.handle_agent_output(&raw, &now)?;
        self.quota[agent] -= 1;
        self.stats.submissions += 1;
        if outcome.is_accepted() {
            self.accepted_keys.push(key);
        } else {
            self.stats.rejected += 1;
            let codes: BTreeSet<String> = outcome
                .codes()
                .iter()
                .map(|c| c.as_str().to_owned())
                .collect();
            for code in codes {
                *self.stats.codes.entry(code).or_default() += 1;
            }
            if workspace_tree_hash(&root).map_err(io_err(&root))? != before {
                self.stats.side_effects += 1;
            }
        }
        Ok(())
    }

    /// Rounds of promote, claim, complete and phase completion.
    fn run_simplified(&mut self) -> Result<(), SimError> {
        let stopped = |cfg: &ScenarioConfig, id: &str| cfg.stop.iter().any(|t| t == id);
        loop {
            let mut progress = false;
            let roadmap = self.orch.roadmap()?;
            for task in &roadmap.tasks {
                if task.state == TaskState::Backlog
                    && !stopped(self.cfg, &task.task_id)
                    && roadmap.dependencies_done(task).is_ok()
                {
                    let now = self.tick();
                    self.orch.promote(&task.task_id, &now)?;
                    progress = true;
                }
            }
            let roadmap = self.orch.roadmap()?;
            let mut busy = vec![false; self.cfg.agents.len()];
            let mut claimed = Vec::new();
            for task in &roadmap.tasks {
                if task.state != TaskState::Ready
                    || task.claimed_by.is_some()
                    || !self.idle(&task.task_id)
                {
                    continue;
                }
                let Some(agent) = self.pick_agent(task, &busy) else {
                    continue;
                };
                busy[agent] = true;
                self.quota[agent] -= 1;
                let now = self.tick();
                self.orch
                    .claim(&task.task_id, &self.cfg.agents[agent].agent_id, &now)?;
                claimed.push((agent, task.clone()));
                progress = true;
            }
            claimed.shuffle(&mut self.rng);
            for (agent, task) in claimed {
                let acceptance = BTreeMap::from([(format!("{} accepted", task.title), true)]);
                let now = self.tick();
                self.orch.complete(
                    &task.task_id,
                    &self.cfg.agents[agent].agent_id,
                    acceptance,
                    &now,
                )?;
            }
            let roadmap = self.orch.roadmap()?;
            for phase in roadmap.phases() {
                let all_done = phase
                    .task_ids
                    .iter()
                    .all(|id| roadmap.task(id).is_some_and(|t| t.state == TaskState::Done));
                if !phase.complete && all_done {
                    let now = self.tick();
                    self.orch.phase_complete(&phase.phase_id, &now)?;
                    progress = true;
                }
            }
            if !progress {
                return Ok(());
            }
        }
    }

    fn finish(mut self) -> Result<RunReport, SimError> {
        let cfg = self.cfg;
        let roadmap = self.orch.roadmap()?;
        let blocked: Vec<String> = roadmap
            .tasks
            .iter()
            .filter(|t| {
                t.state != TaskState::Done
                    && !cfg.stop.contains(&t.task_id)
                    && !cfg.hold.contains(&t.task_id)
            })
            .map(|t| t.task_id.clone())
            .collect();
        if !blocked.is_empty() && !cfg.allow_incomplete {
            return Err(SimError::Stuck { blocked });
        }
        let mut verify_status = roadmap.run.verify_status;
        if cfg.verify {
            let now = self.tick();
            verify_status = self.orch.verify(&now)?.verify_status;
            if cfg.profile == Profile::Full && cfg.end_run {
                let now = self.tick();
                self.orch.end_run(&now)?;
            }
        }
        let records = self.orch.records()?;
        let roadmap = self.orch.roadmap()?;
        let root = self.orch.layout().root().to_owned();
        let log_path = self.orch.layout().log_path();
        let phases = roadmap.phases();
        Ok(RunReport {
            scenario: cfg.name.clone(),
            profile: cfg.profile,
            seed: cfg.seed,
            event_counts: tail_verify_counts(&records),
            wall_events: records.len(),
            submissions: self.stats.submissions,
            rejected_count: self.stats.rejected,
            rejection_codes: self.stats.codes,
            rejections_with_side_effects: self.stats.side_effects,
            final_state_index: roadmap.state_counts(),
            phases_complete: phases.iter().filter(|p| p.complete).count(),
            phases_total: phases.len(),
            run_status: roadmap.run.status,
            verify_status,
            projection_hash: roadmap.digest()?,
            workspace_hash: workspace_tree_hash(&root).map_err(io_err(&root))?,
            log_bytes: fs::metadata(&log_path).map_err(io_err(&log_path))?.len(),
        })
    }
}

/// Where a compliant agent writes for `task`: its first declared file, or a
/// per-kind default inside the kind's boundary.
pub fn default_target(task: &TaskEntry) -> String {
    if let Some(f) = task.files.first() {
        return f.clone();
    }
    match task.kind {
        TaskKind::Spec => format!(".roadmap/specs/{}.md", task.task_id),
        TaskKind::Qa => format!(".roadmap/qa/{}.md", task.task_id),
        TaskKind::Impl | TaskKind::EmergencyPatch => {
            format!("src/{}.txt", task.task_id.to_lowercase())
        }
    }
}

/// The envelope `script` submits for `attempt`, and the idempotency key it used.
pub fn envelope(
    script: &AgentScript,
    attempt: &Attempt,
    task: &TaskEntry,
    last_accepted_key: Option<&String>,
) -> (Vec<u8>, String) {
    let mut key = format!("{}-{}", script.agent_id, attempt.attempt_id);
    let mut path = default_target(task);
    match script.behavior {
        Behavior::PathEscaper => path = format!("src/../../outside/{}.txt", task.task_id),
        Behavior::IdempotencyReplayer => key = last_accepted_key.cloned().unwrap_or_default(),
        _ => {}
    }
    let mut doc = json!({
        "schema_version": "0.3.0",
        "correlation_id": attempt.correlation_id,
        "task_id": task.task_id,
        "attempt_id": attempt.attempt_id,
        "actor": script.agent_id,
        "action": "agent.result",
        "idempotency_key": key,
        "payload": {
            "summary": format!("{}: {}", task.task_id, task.title),
            "proposals": [{
                "type": "file_patch",
                "path": path,
                "patch": format!("@@ -0,0 +1 @@\n+{}\n", task.title),
            }],
        },
    });
    if script.behavior == Behavior::SchemaViolator {
        doc["confidence"] = json!("high");
    }
    (serde_json::to_vec(&doc).expect("envelope serializes"), key)
}

/// Append one claim per task for `agent` under a single permit hold, one
/// scripted step apart. The claims receive consecutive sequence numbers.
pub fn burst_claims(
    orch: &Orchestrator,
    agent: &str,
    task_ids: &[&str],
    clock: &mut ScriptedClock,
    step_seconds: i64,
) -> Result<Vec<EventRecord>, SimError> {
    let events = task_ids
        .iter()
        .map(|id| {
            let ev = NewEvent::new(Action::Claim, clock.now_str())
                .task(*id)
                .agent_id(agent);
            clock.advance(step_seconds);
            ev
        })
        .collect();
    Ok(orch.append_batch(events)?)
}

/// Claims from several agents in a seeded interleaving that keeps each
/// agent's own order. Every claim is a separate append.
pub fn interleaved_claims(
    orch: &Orchestrator,
    bursts: &[(&str, Vec<&str>)],
    seed: u64,
    clock: &mut ScriptedClock,
    step_seconds: i64,
) -> Result<Vec<EventRecord>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = vec![0usize; bursts.len()];
    let mut out = Vec::new();
    loop {
        let live: Vec<usize> = (0..bursts.len())
            .filter(|&i| next[i] < bursts[i].1.len())
            .collect();
        if live.is_empty() {
            return Ok(out);
        }
        let i = live[rng.gen_range(0..live.len() as u32) as usize];
        let (agent, tasks) = &bursts[i];
        let now = clock.now();
        clock.advance(step_seconds);
        out.push(orch.claim(tasks[next[i]], agent, &now)?);
        next[i] += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcurrentReport {
    pub accepted: usize,
    pub rejected: usize,
    pub records: Vec<EventRecord>,
}

/// Independent workers, each with its own orchestrator handle on `root`,
/// dispatch and submit compliant envelopes for their share of `tasks`.
/// Only the append permit serializes them.
pub fn run_concurrent(
    root: &Path,
    agents: &[String],
    tasks: &[String],
    start: &str,
) -> Result<ConcurrentReport, SimError> {
    let origin = parse_ts_strict(start)?;
    let results: Vec<Result<(usize, usize), SimError>> = thread::scope(|scope| {
        let handles: Vec<_> = agents
            .iter()
            .enumerate()
            .map(|(w, agent)| {
                let share: Vec<&String> = tasks.iter().skip(w).step_by(agents.len()).collect();
                scope.spawn(move || -> Result<(usize, usize), SimError> {
                    let orch = Orchestrator::open(root)?;
                    let script = AgentScript {
                        agent_id: agent.clone(),
                        behavior: Behavior::Compliant,
                        task_quota: share.len(),
                        kinds: vec![],
                        tasks: vec![],
                    };
                    let (mut ok, mut rejected) = (0, 0);
                    for (n, task_id) in share.into_iter().enumerate() {
                        let now = origin + chrono::Duration::seconds(n as i64);
                        let attempt = orch.dispatch(task_id, agent, &now)?;
                        let task = orch
                            .roadmap()?
                            .task(task_id)
                            .cloned()
                            .expect("dispatched task exists");
                        let (raw, _) = envelope(&script, &attempt, &task, None);
                        if orch.handle_agent_output(&raw, &now)?.is_accepted() {
                            ok += 1;
                        } else {
                            rejected += 1;
                        }
                    }
                    Ok((ok, rejected))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let (mut accepted, mut rejected) = (0, 0);
    for r in results {
        let (a, b) = r?;
        accepted += a;
        rejected += b;
    }
    let records = Orchestrator::open(root)?.records()?;
    Ok(ConcurrentReport {
        accepted,
        rejected,
        records,
    })
}

/// Write a record list as a log plus its projection under `root/.roadmap/`.
pub fn write_fixture(root: &Path, records: &[EventRecord]) -> Result<(), SimError> {
    let dir = root.join(".roadmap");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut log = Vec::new();
    for r in records {
        log.extend_from_slice(&crate::event_store::encode_record(r)?);
    }
    let log_path = dir.join("activity.jsonl");
    fs::write(&log_path, log).map_err(io_err(&log_path))?;
    let roadmap = crate::projection::project(records).map_err(OrchestratorError::from)?;
    let path = dir.join("roadmap.json");
    fs::write(&path, roadmap.to_canonical()?.as_bytes()).map_err(io_err(&path))?;
    Ok(())
}
