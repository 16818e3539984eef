//! Agent output validation and boundary contracts.
//!
//! [`validate_envelope`] checks the closed agent-output schema by hand and
//! reports every violated constraint with a JSON pointer, not just the first.
//! [`enforce_boundary`] then applies the per-task-kind contract loaded from
//! `AGENT_CONTRACT.yaml`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::event_store::{Action, EventRecord};
use crate::projection::{TaskEntry, TaskKind};

pub const ENVELOPE_SCHEMA_VERSION: &str = "0.3.0";
pub const AGENT_OUTPUT_SCHEMA: &str = include_str!("../schemas/agent_output.schema.json");
pub const ROADMAP_SCHEMA: &str = include_str!("../schemas/roadmap.schema.json");

const SUMMARY_MAX_CHARS: usize = 2000;
const AGENT_ACTIONS: [&str; 2] = ["agent.result", "issue.report"];
const ROOT_FIELDS: [&str; 8] = [
    "schema_version",
    "correlation_id",
    "task_id",
    "attempt_id",
    "actor",
    "action",
    "idempotency_key",
    "payload",
];
const PAYLOAD_FIELDS: [&str; 3] = ["summary", "proposals", "issue"];
const ALLOWED_ROOTS: [&str; 2] = [".roadmap/", "src/"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    Schema,
    Authority,
    BoundaryPath,
    BoundaryKind,
    IdempotencyReplay,
    StaleAttempt,
    Conflict,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::Schema => "schema",
            ViolationCode::Authority => "authority",
            ViolationCode::BoundaryPath => "boundary-path",
            ViolationCode::BoundaryKind => "boundary-kind",
            ViolationCode::IdempotencyReplay => "idempotency-replay",
            ViolationCode::StaleAttempt => "stale-attempt",
            ViolationCode::Conflict => "conflict",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub pointer: String,
    pub message: String,
}

impl Violation {
    pub fn new(
        code: ViolationCode,
        pointer: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Violation {
            code,
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {}",
            self.code,
            if self.pointer.is_empty() {
                "/"
            } else {
                &self.pointer
            },
            self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueReport {
    pub title: String,
    pub details: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilePatchProposal {
    #[serde(rename = "type")]
    pub kind: String,
    pub path: String,
    pub patch: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals: Option<Vec<FilePatchProposal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<IssueReport>,
}

impl EnvelopePayload {
    pub fn proposals(&self) -> &[FilePatchProposal] {
        self.proposals.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvelopeAction {
    #[serde(rename = "agent.result")]
    AgentResult,
    #[serde(rename = "issue.report")]
    IssueReport,
}

impl EnvelopeAction {
    pub fn as_action(self) -> Action {
        match self {
            EnvelopeAction::AgentResult => Action::AgentResult,
            EnvelopeAction::IssueReport => Action::IssueReport,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.as_action().as_str()
    }
}

/// A schema-valid agent submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOutputEnvelope {
    pub schema_version: String,
    pub correlation_id: String,
    pub task_id: String,
    pub attempt_id: String,
    pub actor: String,
    pub action: EnvelopeAction,
    pub idempotency_key: String,
    pub payload: EnvelopePayload,
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn schema(&mut self, pointer: &str, message: impl Into<String>) {
        self.violations
            .push(Violation::new(ViolationCode::Schema, pointer, message));
    }

    fn string<'v>(
        &mut self,
        obj: &'v Map<String, Value>,
        key: &str,
        pointer: &str,
    ) -> Option<&'v str> {
        match obj.get(key) {
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.schema(pointer, "must be a string");
                None
            }
            None => None,
        }
    }

    fn min_len(&mut self, obj: &Map<String, Value>, key: &str, min: usize) {
        let pointer = format!("/{key}");
        if let Some(s) = self.string(obj, key, &pointer) {
            if s.chars().count() < min {
                self.schema(&pointer, format!("must be at least {min} characters"));
            }
        }
    }

    fn closed(&mut self, obj: &Map<String, Value>, allowed: &[&str], pointer: &str) {
        for key in obj.keys().filter(|k| !allowed.contains(&k.as_str())) {
            self.schema(
                pointer,
                format!("additional property {key:?} is not allowed"),
            );
        }
    }

    fn required(&mut self, obj: &Map<String, Value>, required: &[&str], pointer: &str) {
        for key in required.iter().filter(|k| !obj.contains_key(**k)) {
            self.schema(pointer, format!("missing required property {key:?}"));
        }
    }

    fn proposals(&mut self, value: &Value) {
        let Some(items) = value.as_array() else {
            self.schema("/payload/proposals", "must be an array");
            return;
        };
        for (i, item) in items.iter().enumerate() {
            let base = format!("/payload/proposals/{i}");
            let Some(obj) = item.as_object() else {
                self.schema(&base, "must be an object");
                continue;
            };
            self.required(obj, &["type", "path", "patch"], &base);
            if let Some(t) = obj.get("type") {
                if t != "file_patch" {
                    self.schema(&format!("{base}/type"), "must equal \"file_patch\"");
                }
            }
            if let Some(path) = self.string(obj, "path", &format!("{base}/path")) {
                if !ALLOWED_ROOTS.iter().any(|root| path.starts_with(root)) {
                    self.schema(&format!("{base}/path"), "must start with .roadmap/ or src/");
                }
            }
            if let Some(patch) = self.string(obj, "patch", &format!("{base}/patch")) {
                if patch.is_empty() {
                    self.schema(&format!("{base}/patch"), "must not be empty");
                }
            }
        }
    }

    fn issue(&mut self, value: &Value) {
        let Some(obj) = value.as_object() else {
            self.schema("/payload/issue", "must be an object");
            return;
        };
        self.required(obj, &["title", "details", "severity"], "/payload/issue");
        self.string(obj, "title", "/payload/issue/title");
        self.string(obj, "details", "/payload/issue/details");
        if let Some(sev) = obj.get("severity") {
            if !matches!(sev.as_str(), Some("low" | "medium" | "high" | "critical")) {
                self.schema(
                    "/payload/issue/severity",
                    format!("{sev} is not one of low, medium, high, critical"),
                );
            }
        }
    }
}

/// Validate raw agent output against the closed envelope schema.
///
/// The actor pattern and the action enum are reported with code `authority`;
/// everything else is `schema`. Two rules go beyond the shipped schema file:
/// `idempotency_key` must be non-empty, and the payload must carry an `issue`
/// for `issue.report` and a `summary` or `proposals` for `agent.result`.
pub fn validate_envelope(raw: &[u8]) -> Result<AgentOutputEnvelope, Vec<Violation>> {
    let doc: Value = serde_json::from_slice(raw).map_err(|e| {
        vec![Violation::new(
            ViolationCode::Schema,
            "",
            format!("not valid JSON: {e}"),
        )]
    })?;
    let Some(root) = doc.as_object() else {
        return Err(vec![Violation::new(
            ViolationCode::Schema,
            "",
            "envelope must be a JSON object",
        )]);
    };
    let mut c = Checker {
        violations: Vec::new(),
    };
    c.closed(root, &ROOT_FIELDS, "");
    c.required(root, &ROOT_FIELDS, "");

    if let Some(v) = root.get("schema_version") {
        if v != ENVELOPE_SCHEMA_VERSION {
            c.schema(
                "/schema_version",
                format!("must equal {ENVELOPE_SCHEMA_VERSION:?}"),
            );
        }
    }
    c.min_len(root, "correlation_id", 8);
    c.min_len(root, "task_id", 3);
    c.min_len(root, "attempt_id", 8);
    if let Some(actor) = c.string(root, "actor", "/actor") {
        if !actor.starts_with("agent-") {
            c.violations.push(Violation::new(
                ViolationCode::Authority,
                "/actor",
                format!("{actor:?} does not match ^agent-.*"),
            ));
        }
    }
    let action = root.get("action").and_then(Value::as_str);
    if let Some(v) = root.get("action") {
        if !action.is_some_and(|a| AGENT_ACTIONS.contains(&a)) {
            c.violations.push(Violation::new(
                ViolationCode::Authority,
                "/action",
                format!("{v} is not an agent action (agent.result, issue.report)"),
            ));
        }
    }
    if let Some(key) = c.string(root, "idempotency_key", "/idempotency_key") {
        if key.is_empty() {
            c.schema("/idempotency_key", "must not be empty");
        }
    }
    match root.get("payload") {
        Some(Value::Object(payload)) => {
            c.closed(payload, &PAYLOAD_FIELDS, "/payload");
            if let Some(summary) = c.string(payload, "summary", "/payload/summary") {
                if summary.chars().count() > SUMMARY_MAX_CHARS {
                    c.schema(
                        "/payload/summary",
                        format!("must be at most {SUMMARY_MAX_CHARS} characters"),
                    );
                }
            }
            if let Some(p) = payload.get("proposals") {
                c.proposals(p);
            }
            if let Some(issue) = payload.get("issue") {
                c.issue(issue);
            }
            match action {
                Some("issue.report") if !payload.contains_key("issue") => {
                    c.schema("/payload", "issue.report requires payload.issue")
                }
                Some("agent.result")
                    if !payload.contains_key("proposals") && !payload.contains_key("summary") =>
                {
                    c.schema(
                        "/payload",
                        "agent.result requires payload.proposals or payload.summary",
                    )
                }
                _ => {}
            }
        }
        Some(_) => c.schema("/payload", "must be an object"),
        None => {}
    }

    if !c.violations.is_empty() {
        return Err(c.violations);
    }
    serde_json::from_value(doc)
        .map_err(|e| vec![Violation::new(ViolationCode::Schema, "", e.to_string())])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindRule {
    pub actions: Vec<String>,
    pub prefixes: Vec<String>,
    pub max_proposals: usize,
}

/// Per-task-kind permissions plus the global prohibitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryContract {
    pub version: String,
    pub kinds: BTreeMap<TaskKind, KindRule>,
    /// Actions no agent may ever author. The built-in list is always included.
    #[serde(default)]
    pub prohibitions: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("reading contract {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing contract: {0}")]
    Parse(String),
    #[error("invalid contract: {0}")]
    Invalid(String),
}

impl Default for BoundaryContract {
    fn default() -> Self {
        let rule = |prefixes: &[&str]| KindRule {
            actions: AGENT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            prefixes: prefixes.iter().map(|s| s.to_string()).collect(),
            max_proposals: 8,
        };
        let kinds = BTreeMap::from([
            (TaskKind::Spec, rule(&[".roadmap/specs/"])),
            (TaskKind::Impl, rule(&["src/"])),
            (TaskKind::Qa, rule(&[".roadmap/qa/"])),
            (TaskKind::EmergencyPatch, rule(&["src/", ".roadmap/qa/"])),
        ]);
        BoundaryContract {
            version: ENVELOPE_SCHEMA_VERSION.into(),
            kinds,
            prohibitions: builtin_prohibitions(),
        }
    }
}

/// Every orchestrator-only action plus the raw `file.write` an agent might try.
fn builtin_prohibitions() -> Vec<String> {
    let mut list: Vec<String> = Action::FULL
        .iter()
        .chain(Action::SIMPLIFIED.iter())
        .filter(|a| !matches!(a, Action::AgentResult | Action::IssueReport))
        .map(|a| a.as_str().to_owned())
        .collect();
    list.push("file.write".into());
    list.sort();
    list
}

impl BoundaryContract {
    pub fn from_yaml(text: &str) -> Result<Self, ContractError> {
        let contract: BoundaryContract =
            serde_yaml::from_str(text).map_err(|e| ContractError::Parse(e.to_string()))?;
        contract.validated()
    }

    pub fn load(path: &Path) -> Result<Self, ContractError> {
        let text = std::fs::read_to_string(path).map_err(|source| ContractError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("contract serializes to YAML")
    }

    /// Check the contract and fold in the built-in prohibitions.
    pub fn validated(mut self) -> Result<Self, ContractError> {
        for kind in TaskKind::ALL {
            let Some(rule) = self.kinds.get(&kind) else {
                return Err(ContractError::Invalid(format!(
                    "no entry for task kind {kind}"
                )));
            };
            for action in &rule.actions {
                if !AGENT_ACTIONS.contains(&action.as_str()) {
                    return Err(ContractError::Invalid(format!(
                        "kind {kind} may not grant {action:?}: agents only emit agent.result and issue.report"
                    )));
                }
                if self.prohibitions.contains(action) {
                    return Err(ContractError::Invalid(format!(
                        "kind {kind} grants prohibited action {action:?}"
                    )));
                }
            }
            for prefix in &rule.prefixes {
                let under_root = ALLOWED_ROOTS.iter().any(|r| prefix.starts_with(r));
                if !under_root
                    || !prefix.ends_with('/')
                    || path_problem(prefix.trim_end_matches('/')).is_some()
                {
                    return Err(ContractError::Invalid(format!(
                        "kind {kind}: prefix {prefix:?} must be a directory under .roadmap/ or src/ ending in '/'"
                    )));
                }
            }
            if rule.max_proposals == 0 {
                return Err(ContractError::Invalid(format!(
                    "kind {kind}: max_proposals must be at least 1"
                )));
            }
        }
        self.prohibitions.extend(builtin_prohibitions());
        self.prohibitions.sort();
        self.prohibitions.dedup();
        Ok(self)
    }

    pub fn rule(&self, kind: TaskKind) -> &KindRule {
        // validated() guarantees every kind is present
        &self.kinds[&kind]
    }
}

/// Why a relative path is unsafe, if it is.
pub fn path_problem(path: &str) -> Option<&'static str> {
    if path.is_empty() {
        return Some("empty path");
    }
    if path.starts_with('/') || path.starts_with('\\') || path.contains(':') {
        return Some("absolute path");
    }
    if path.contains('\\') || path.contains('\0') {
        return Some("path contains a backslash or NUL");
    }
    for segment in path.split('/') {
        match segment {
            ".." => return Some("path traversal segment '..'"),
            "." | "" => return Some("non-normalized path segment"),
            _ => {}
        }
    }
    None
}

/// Check a schema-valid envelope against the contract for its task.
pub fn enforce_boundary(
    env: &AgentOutputEnvelope,
    task: &TaskEntry,
    contract: &BoundaryContract,
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let rule = contract.rule(task.kind);
    let action = env.action.as_str();
    if env.task_id != task.task_id {
        violations.push(Violation::new(
            ViolationCode::BoundaryKind,
            "/task_id",
            format!(
                "envelope targets {} but the attempt belongs to {}",
                env.task_id, task.task_id
            ),
        ));
    }
    if contract.prohibitions.iter().any(|p| p == action)
        || !rule.actions.iter().any(|a| a == action)
    {
        violations.push(Violation::new(
            ViolationCode::BoundaryKind,
            "/action",
            format!("{action} is not permitted for {} tasks", task.kind),
        ));
    }
    let proposals = env.payload.proposals();
    if proposals.len() > rule.max_proposals {
        violations.push(Violation::new(
            ViolationCode::BoundaryKind,
            "/payload/proposals",
            format!(
                "{} proposals exceed the {} limit of {}",
                proposals.len(),
                task.kind,
                rule.max_proposals
            ),
        ));
    }
    for (i, p) in proposals.iter().enumerate() {
        let pointer = format!("/payload/proposals/{i}/path");
        if let Some(problem) = path_problem(&p.path) {
            violations.push(Violation::new(
                ViolationCode::BoundaryPath,
                pointer,
                format!("{:?}: {problem}", p.path),
            ));
        } else if !rule
            .prefixes
            .iter()
            .any(|prefix| p.path.starts_with(prefix.as_str()))
        {
            violations.push(Violation::new(
                ViolationCode::BoundaryPath,
                pointer,
                format!(
                    "{:?} is outside {} ({})",
                    p.path,
                    task.kind,
                    rule.prefixes.join(", ")
                ),
            ));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Idempotency {
    Fresh,
    ReplayOf(u64),
}

/// Look for an accepted agent event carrying `key`. Rejected submissions do
/// not consume keys.
pub fn check_idempotency(key: &str, log: &[EventRecord]) -> Idempotency {
    log.iter()
        .find(|r| {
            matches!(r.action(), Some(Action::AgentResult | Action::IssueReport))
                && r.idempotency_key.as_deref() == Some(key)
        })
        .map_or(Idempotency::Fresh, |r| Idempotency::ReplayOf(r.event_seq))
}
