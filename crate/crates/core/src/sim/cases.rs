//! The two bundled case studies: a nine-task landing page run on the full
//! profile and a fifty-task clinical dashboard on the simplified profile.

use std::collections::BTreeMap;

use chrono::Duration;
use serde_json::json;

use crate::clock::{format_ts, parse_ts_strict};
use crate::event_store::{Action, EventRecord, NewEvent};
use crate::projection::{InitPayload, ProjectSeed, TaskKind, TaskSeed, TaskState};

pub const CS1_PROJECT: &str = "example-landingpage";
pub const CS2_PROJECT: &str = "clinic-asr";
pub const CS2_RUN_ID: &str = "run-clinic-asr";

pub const SONNET: &str = "claude-sonnet-4-6";
pub const CODEX: &str = "codex-gpt-5";
pub const ANTIGRAVITY: &str = "antigravity-gemini-3-pro";
pub const OPUS: &str = "claude-opus-4-6";

/// Nine sequential tasks: four specs, three implementation files, two QA reports.
pub fn cs1_catalog() -> Vec<TaskSeed> {
    let rows: [(&str, TaskKind, &str, &str); 9] = [
        (
            "T-1000",
            TaskKind::Spec,
            "Product brief",
            ".roadmap/specs/T-1000-brief.md",
        ),
        (
            "T-1010",
            TaskKind::Spec,
            "Information architecture",
            ".roadmap/specs/T-1010-ia.md",
        ),
        (
            "T-1020",
            TaskKind::Spec,
            "Visual style guide",
            ".roadmap/specs/T-1020-style.md",
        ),
        (
            "T-1030",
            TaskKind::Spec,
            "Copy deck",
            ".roadmap/specs/T-1030-copy.md",
        ),
        ("T-1100", TaskKind::Impl, "Page structure", "src/index.html"),
        ("T-1110", TaskKind::Impl, "Stylesheet", "src/styles.css"),
        ("T-1120", TaskKind::Impl, "Interactions", "src/app.js"),
        (
            "T-1200",
            TaskKind::Qa,
            "Functional QA report",
            ".roadmap/qa/T-1200-functional.md",
        ),
        (
            "T-1210",
            TaskKind::Qa,
            "Accessibility QA report",
            ".roadmap/qa/T-1210-a11y.md",
        ),
    ];
    let mut prev: Option<&str> = None;
    rows.iter()
        .map(|&(id, kind, title, file)| {
            let seed = TaskSeed {
                task_id: id.into(),
                kind,
                title: title.into(),
                depends_on: prev.map(|p| vec![p.to_owned()]).unwrap_or_default(),
                files: vec![file.into()],
                phase_id: None,
                state: None,
            };
            prev = Some(id);
            seed
        })
        .collect()
}

/// One row of the clinical dashboard catalog.
#[derive(Debug, Clone, Copy)]
pub struct Cs2Task {
    pub task_id: &'static str,
    pub kind: TaskKind,
    pub component: &'static str,
    /// Starts `ready` instead of `backlog`.
    pub seeded: bool,
    /// Agent that carries the task in the recorded run, if it was worked on.
    pub agent: Option<&'static str>,
    pub depends_on: &'static [&'static str],
    pub title: &'static str,
    pub criterion: &'static str,
}

impl Cs2Task {
    pub fn phase_id(&self) -> String {
        format!("PH-{}", &self.task_id[2..4])
    }

    pub fn seed(&self) -> TaskSeed {
        TaskSeed {
            task_id: self.task_id.into(),
            kind: self.kind,
            title: self.title.into(),
            depends_on: self.depends_on.iter().map(|d| d.to_string()).collect(),
            files: vec![],
            phase_id: Some(self.phase_id()),
            state: self.seeded.then_some(TaskState::Ready),
        }
    }
}

#[allow(clippy::too_many_arguments)]
const fn row(
    task_id: &'static str,
    kind: TaskKind,
    component: &'static str,
    seeded: bool,
    agent: Option<&'static str>,
    depends_on: &'static [&'static str],
    title: &'static str,
    criterion: &'static str,
) -> Cs2Task {
    Cs2Task {
        task_id,
        kind,
        component,
        seeded,
        agent,
        depends_on,
        title,
        criterion,
    }
}

use TaskKind::{Impl, Qa, Spec};
const R: bool = true;
const B: bool = false;
const S: Option<&str> = Some(SONNET);
const C: Option<&str> = Some(CODEX);
const A: Option<&str> = Some(ANTIGRAVITY);
const O: Option<&str> = Some(OPUS);
const N: Option<&str> = None;

/// Fifty tasks over phases PH-19..PH-33. The longest dependency chain runs
/// T-1901 → T-2001 → T-2101 → T-2201 → T-2501 → T-2601 → T-2701 → T-3001 → T-3301.
pub const CS2_CATALOG: [Cs2Task; 50] = [
    row(
        "T-1901",
        Spec,
        "database",
        R,
        S,
        &[],
        "Specify patient and session schema",
        "Schema reviewed",
    ),
    row(
        "T-1902",
        Impl,
        "database",
        B,
        S,
        &["T-1901"],
        "Write initial schema migrations",
        "Migrations apply",
    ),
    row(
        "T-1903",
        Spec,
        "api",
        R,
        S,
        &[],
        "Define REST API contract",
        "Contract published",
    ),
    row(
        "T-1904",
        Spec,
        "api",
        B,
        S,
        &["T-1903"],
        "Define SSE event vocabulary",
        "Vocabulary published",
    ),
    row(
        "T-1905",
        Spec,
        "configuration",
        R,
        S,
        &[],
        "Design configuration system",
        "Design approved",
    ),
    row(
        "T-2001",
        Impl,
        "database",
        B,
        A,
        &["T-1901"],
        "Implement persistence layer",
        "Persistence tests pass",
    ),
    row(
        "T-2002",
        Spec,
        "api",
        R,
        C,
        &[],
        "Specify SPA architecture and API client",
        "Architecture approved",
    ),
    row(
        "T-2003",
        Impl,
        "api",
        B,
        C,
        &["T-2002"],
        "Scaffold API service",
        "Service boots",
    ),
    row(
        "T-2004",
        Qa,
        "testing",
        R,
        C,
        &[],
        "Set up test harness",
        "Harness runs",
    ),
    row(
        "T-2101",
        Impl,
        "api",
        B,
        C,
        &["T-2001"],
        "Implement patient endpoints",
        "Endpoints respond",
    ),
    row(
        "T-2102",
        Impl,
        "api",
        R,
        C,
        &[],
        "Implement session endpoints",
        "Endpoints respond",
    ),
    row(
        "T-2103",
        Qa,
        "testing",
        B,
        C,
        &["T-1902"],
        "Add migration tests",
        "Tests pass",
    ),
    row(
        "T-2104",
        Spec,
        "testing",
        R,
        S,
        &[],
        "Specify test data fixtures",
        "Fixtures specified",
    ),
    row(
        "T-2201",
        Impl,
        "api",
        B,
        C,
        &["T-2101"],
        "Implement transcription endpoints",
        "Endpoints respond",
    ),
    row(
        "T-2202",
        Impl,
        "api",
        B,
        S,
        &["T-2102"],
        "Implement SSE stream endpoint",
        "Stream delivers events",
    ),
    row(
        "T-2203",
        Spec,
        "configuration",
        R,
        C,
        &[],
        "Audit configuration defaults",
        "Audit recorded",
    ),
    row(
        "T-2204",
        Qa,
        "testing",
        B,
        C,
        &["T-2203"],
        "Add configuration tests",
        "Tests pass",
    ),
    row(
        "T-2301",
        Spec,
        "configuration",
        R,
        O,
        &[],
        "Document security rules",
        "Rules documented",
    ),
    row(
        "T-2302",
        Spec,
        "observability",
        R,
        O,
        &[],
        "Document audit events",
        "Events documented",
    ),
    row(
        "T-2303",
        Spec,
        "observability",
        R,
        O,
        &[],
        "Define observability strategy",
        "Strategy documented",
    ),
    row(
        "T-2401",
        Spec,
        "database",
        R,
        O,
        &[],
        "Document data retention and privacy",
        "Policy documented",
    ),
    row(
        "T-2402",
        Impl,
        "api",
        B,
        C,
        &["T-2401"],
        "Implement privacy redaction",
        "Redaction verified",
    ),
    row(
        "T-2403",
        Spec,
        "configuration",
        R,
        O,
        &[],
        "Write deployment guide",
        "Guide documented",
    ),
    row(
        "T-2501",
        Impl,
        "database",
        B,
        A,
        &["T-2201"],
        "Implement repository layer",
        "Repository tests pass",
    ),
    row(
        "T-2502",
        Impl,
        "api",
        B,
        S,
        &["T-2104"],
        "Implement settings endpoints",
        "Endpoints respond",
    ),
    row(
        "T-2503",
        Impl,
        "observability",
        R,
        S,
        &[],
        "Add request metrics",
        "Metrics emitted",
    ),
    row(
        "T-2504",
        Impl,
        "api",
        B,
        A,
        &["T-2503"],
        "Expose metrics endpoint",
        "Endpoint responds",
    ),
    row(
        "T-2601",
        Impl,
        "database",
        B,
        A,
        &["T-2501"],
        "Integrate transcription service",
        "Integration verified",
    ),
    row(
        "T-2602",
        Impl,
        "database",
        B,
        A,
        &["T-2601"],
        "Implement session archival",
        "Archival verified",
    ),
    row(
        "T-2603",
        Qa,
        "testing",
        B,
        S,
        &["T-2502"],
        "Add settings API tests",
        "Tests pass",
    ),
    row(
        "T-2701",
        Impl,
        "web-ui",
        B,
        C,
        &["T-2601"],
        "Build dashboard shell",
        "Shell renders",
    ),
    row(
        "T-2702",
        Impl,
        "web-ui",
        R,
        N,
        &[],
        "Build login screen",
        "Login works",
    ),
    row(
        "T-2703",
        Impl,
        "web-ui",
        R,
        N,
        &[],
        "Build design-system components",
        "Components render",
    ),
    row(
        "T-2801",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2702"],
        "Build patient list view",
        "List renders",
    ),
    row(
        "T-2802",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2703"],
        "Build session timeline",
        "Timeline renders",
    ),
    row(
        "T-2803",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2702"],
        "Build settings page",
        "Page renders",
    ),
    row(
        "T-2901",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2801"],
        "Build live transcript panel",
        "Panel streams",
    ),
    row(
        "T-2902",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2802"],
        "Build audio capture controls",
        "Capture works",
    ),
    row(
        "T-2903",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2803"],
        "Build notification center",
        "Notifications render",
    ),
    row(
        "T-3001",
        Qa,
        "testing",
        B,
        N,
        &["T-2701"],
        "Run end-to-end dashboard tests",
        "Suite passes",
    ),
    row(
        "T-3002",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2901"],
        "Build transcript editor",
        "Editor saves",
    ),
    row(
        "T-3003",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2902"],
        "Build export dialog",
        "Export works",
    ),
    row(
        "T-3101",
        Impl,
        "web-ui",
        B,
        N,
        &["T-3002"],
        "Build offline banner",
        "Banner shows",
    ),
    row(
        "T-3102",
        Impl,
        "web-ui",
        B,
        N,
        &["T-2903"],
        "Add keyboard shortcuts",
        "Shortcuts work",
    ),
    row(
        "T-3103",
        Impl,
        "web-ui",
        B,
        N,
        &["T-3003"],
        "Build audit log viewer",
        "Viewer renders",
    ),
    row(
        "T-3201",
        Impl,
        "web-ui",
        B,
        N,
        &["T-3101"],
        "Fix accessibility findings",
        "Audit clean",
    ),
    row(
        "T-3202",
        Qa,
        "testing",
        B,
        N,
        &["T-3102"],
        "Add UI regression tests",
        "Tests pass",
    ),
    row(
        "T-3203",
        Impl,
        "web-ui",
        B,
        N,
        &["T-3103"],
        "Polish responsive layout",
        "Layout verified",
    ),
    row(
        "T-3301",
        Spec,
        "docs-release",
        B,
        N,
        &["T-3001"],
        "Cut release 1.0",
        "Release tagged",
    ),
    row(
        "T-3302",
        Spec,
        "docs-release",
        B,
        N,
        &["T-3201"],
        "Write release notes",
        "Notes published",
    ),
];

pub fn cs2_task(task_id: &str) -> Option<&'static Cs2Task> {
    CS2_CATALOG.iter().find(|t| t.task_id == task_id)
}

pub fn cs2_catalog() -> Vec<TaskSeed> {
    CS2_CATALOG.iter().map(Cs2Task::seed).collect()
}

/// Phases PH-27..PH-33 are never started in the recorded run.
pub fn cs2_untouched() -> Vec<String> {
    CS2_CATALOG
        .iter()
        .filter(|t| t.task_id >= "T-2801")
        .map(|t| t.task_id.to_owned())
        .collect()
}

/// Which of the two recorded end states the fixture reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cs2Variant {
    /// 31 done, 2 ready: one ready task is completed without a prior claim.
    ThirtyOne,
    /// 30 claims and 30 completes: 30 done, 3 ready.
    Thirty,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Promote(&'static str),
    Claim(&'static str),
    Complete(&'static str),
    Phase(&'static str),
}

use Step::{Claim as Cl, Complete as Co, Phase as Ph, Promote as Pr};

/// Steps 1..=54, spaced 13 minutes apart from 09:00.
const DAYTIME: [Step; 54] = [
    Cl("T-1901"),
    Cl("T-1903"),
    Co("T-1901"),
    Pr("T-1902"),
    Pr("T-2001"),
    Cl("T-2002"),
    Co("T-1903"),
    Pr("T-1904"),
    Cl("T-1902"),
    Co("T-2002"),
    Pr("T-2003"),
    Co("T-1902"),
    Pr("T-2103"),
    Cl("T-1904"),
    Cl("T-1905"),
    Co("T-1904"),
    Co("T-1905"),
    Ph("PH-19"),
    Cl("T-2001"),
    Cl("T-2003"),
    Co("T-2001"),
    Pr("T-2101"),
    Cl("T-2004"),
    Co("T-2003"),
    Co("T-2004"),
    Ph("PH-20"),
    Cl("T-2101"),
    Cl("T-2102"),
    Co("T-2101"),
    Pr("T-2201"),
    Co("T-2102"),
    Pr("T-2202"),
    Cl("T-2103"),
    Cl("T-2104"),
    Co("T-2103"),
    Co("T-2104"),
    Ph("PH-21"),
    Pr("T-2502"),
    Cl("T-2201"),
    Cl("T-2203"),
    Co("T-2201"),
    Pr("T-2501"),
    Co("T-2203"),
    Pr("T-2204"),
    Cl("T-2202"),
    Cl("T-2204"),
    Co("T-2202"),
    Co("T-2204"),
    Ph("PH-22"),
    Cl("T-2501"),
    Cl("T-2502"),
    Co("T-2501"),
    Pr("T-2601"),
    Co("T-2502"),
];

/// Steps 55..=85 with their local wall times.
const EVENING: [(&str, Step); 31] = [
    ("2026-02-19T21:55:01", Cl("T-2601")),
    ("2026-02-19T21:55:05", Co("T-2601")),
    ("2026-02-19T21:55:44", Cl("T-2301")),
    ("2026-02-19T21:55:45", Cl("T-2302")),
    ("2026-02-19T21:55:46", Cl("T-2303")),
    ("2026-02-19T21:55:47", Cl("T-2401")),
    ("2026-02-19T21:55:48", Cl("T-2403")),
    ("2026-02-19T21:56:10", Co("T-2301")),
    ("2026-02-19T21:56:20", Co("T-2302")),
    ("2026-02-19T21:58:40", Co("T-2303")),
    ("2026-02-19T21:58:41", Ph("PH-23")),
    ("2026-02-19T22:01:12", Co("T-2401")),
    ("2026-02-19T22:01:30", Pr("T-2402")),
    ("2026-02-19T22:03:00", Cl("T-2402")),
    ("2026-02-19T22:06:45", Co("T-2403")),
    ("2026-02-19T22:10:00", Cl("T-2503")),
    ("2026-02-19T22:24:00", Co("T-2503")),
    ("2026-02-19T22:24:30", Pr("T-2504")),
    ("2026-02-19T22:25:00", Pr("T-2602")),
    ("2026-02-19T22:25:05", Pr("T-2603")),
    ("2026-02-19T22:25:10", Pr("T-2701")),
    ("2026-02-19T22:26:00", Cl("T-2504")),
    ("2026-02-19T22:27:00", Cl("T-2602")),
    ("2026-02-19T22:30:00", Cl("T-2603")),
    ("2026-02-19T22:48:00", Co("T-2402")),
    ("2026-02-19T22:48:30", Ph("PH-24")),
    ("2026-02-19T23:05:00", Co("T-2504")),
    ("2026-02-19T23:05:30", Ph("PH-25")),
    ("2026-02-19T23:40:00", Co("T-2602")),
    ("2026-02-20T00:10:00", Co("T-2603")),
    ("2026-02-20T00:14:00", Ph("PH-26")),
];

/// The step the 31-complete variant substitutes for the T-2603 claim.
const EVENING_SWAP: (usize, Step) = (23, Co("T-2701"));

const LOCAL_OFFSET: &str = "-03:00";
const START: &str = "2026-02-19T09:00:00-03:00";

fn acceptance(task: &Cs2Task) -> BTreeMap<String, bool> {
    BTreeMap::from([(task.criterion.to_owned(), true)])
}

fn step_event(step: Step, ts: String) -> NewEvent {
    let task = |id: &str| cs2_task(id).expect("timeline names catalog tasks");
    let agent = |t: &Cs2Task| t.agent.expect("worked tasks have an agent");
    match step {
        Step::Promote(id) => NewEvent::new(Action::Promote, ts).task(id),
        Step::Claim(id) => NewEvent::new(Action::Claim, ts)
            .task(id)
            .agent_id(agent(task(id))),
        Step::Complete(id) => {
            let t = task(id);
            NewEvent::new(Action::Complete, ts)
                .task(id)
                .agent_id(agent(t))
                .acceptance(acceptance(t))
        }
        Step::Phase(p) => {
            NewEvent::new(Action::PhaseComplete, ts).payload(json!({ "phase_id": p }))
        }
    }
}

/// The opening `roadmap.version` event of the clinical dashboard log.
pub fn cs2_init_event() -> NewEvent {
    let init = InitPayload {
        run_id: CS2_RUN_ID.into(),
        project: ProjectSeed {
            name: CS2_PROJECT.into(),
            audit_scope: "project".into(),
        },
        version: Some("0.3.0".into()),
        tasks: cs2_catalog(),
    };
    NewEvent::new(Action::RoadmapVersion, START)
        .payload(serde_json::to_value(init).expect("init payload serializes"))
}

/// The 86-event clinical dashboard log.
pub fn cs2_events(variant: Cs2Variant) -> Vec<NewEvent> {
    let start = parse_ts_strict(START).expect("valid start");
    let mut out = vec![cs2_init_event()];
    for (k, step) in DAYTIME.iter().enumerate() {
        let ts = start + Duration::minutes(13 * (k as i64 + 1));
        out.push(step_event(*step, format_ts(&ts)));
    }
    for (i, (local, step)) in EVENING.iter().enumerate() {
        let step = match variant {
            Cs2Variant::ThirtyOne if i == EVENING_SWAP.0 => EVENING_SWAP.1,
            _ => *step,
        };
        out.push(step_event(step, format!("{local}{LOCAL_OFFSET}")));
    }
    out
}

pub fn cs2_records(variant: Cs2Variant) -> Vec<EventRecord> {
    cs2_events(variant)
        .into_iter()
        .enumerate()
        .map(|(i, ev)| ev.with_seq(i as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::tail_verify_counts;
    use crate::projection::project;
    use std::collections::BTreeSet;

    fn longest_chain(catalog: &[Cs2Task]) -> Vec<&'static str> {
        fn depth(
            id: &'static str,
            memo: &mut BTreeMap<&'static str, Vec<&'static str>>,
        ) -> Vec<&'static str> {
            if let Some(v) = memo.get(id) {
                return v.clone();
            }
            let t = cs2_task(id).unwrap();
            let mut best: Vec<&'static str> = vec![];
            for d in t.depends_on {
                let c = depth(d, memo);
                if c.len() > best.len() {
                    best = c;
                }
            }
            best.push(t.task_id);
            memo.insert(id, best.clone());
            best
        }
        let mut memo = BTreeMap::new();
        catalog
            .iter()
            .map(|t| depth(t.task_id, &mut memo))
            .max_by_key(Vec::len)
            .unwrap()
    }

    #[test]
    fn cs2_catalog_shape() {
        assert_eq!(CS2_CATALOG.len(), 50);
        let ids: BTreeSet<_> = CS2_CATALOG.iter().map(|t| t.task_id).collect();
        assert_eq!(ids.len(), 50);
        let phases: BTreeSet<_> = CS2_CATALOG.iter().map(Cs2Task::phase_id).collect();
        assert_eq!(phases.len(), 15);
        assert_eq!(phases.first().unwrap(), "PH-19");
        assert_eq!(phases.last().unwrap(), "PH-33");
        let mut components: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &CS2_CATALOG {
            *components.entry(t.component).or_default() += 1;
        }
        let want: BTreeMap<&str, usize> = [
            ("web-ui", 16),
            ("api", 11),
            ("database", 7),
            ("testing", 7),
            ("configuration", 4),
            ("observability", 3),
            ("docs-release", 2),
        ]
        .into();
        assert_eq!(components, want);
        let chain = longest_chain(&CS2_CATALOG);
        assert_eq!(chain.len(), 9);
        assert_eq!(chain.first(), Some(&"T-1901"));
        assert_eq!(chain.last(), Some(&"T-3301"));
    }

    #[test]
    fn agent_assignment_sizes() {
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for t in CS2_CATALOG.iter().filter(|t| t.task_id < "T-2701") {
            *per.entry(t.agent.unwrap()).or_default() += 1;
        }
        assert_eq!(per[SONNET], 10);
        assert_eq!(per[CODEX], 10);
        assert_eq!(per[ANTIGRAVITY], 5);
        assert_eq!(per[OPUS], 5);
    }

    #[test]
    fn both_variants_fold() {
        for (variant, done, ready, claims, completes) in [
            (Cs2Variant::Thirty, 30, 3, 30, 30),
            (Cs2Variant::ThirtyOne, 31, 2, 29, 31),
        ] {
            let records = cs2_records(variant);
            assert_eq!(records.len(), 86);
            let rm = project(&records).unwrap();
            assert_eq!(rm.count_in(TaskState::Done), done);
            assert_eq!(rm.count_in(TaskState::Ready), ready);
            assert_eq!(rm.count_in(TaskState::Backlog), 17);
            assert_eq!(rm.indexes.completed_phases.len(), 8);
            let counts = tail_verify_counts(&records);
            assert_eq!(counts["claim"], claims);
            assert_eq!(counts["complete"], completes);
            assert_eq!(counts["promote"], 17);
        }
    }

    #[test]
    fn untouched_tasks_are_the_last_six_phases() {
        let u = cs2_untouched();
        assert_eq!(u.len(), 17);
        assert!(u.iter().all(|id| id.as_str() >= "T-2801"));
    }

    #[test]
    fn cs1_is_a_linear_chain() {
        let c = cs1_catalog();
        assert_eq!(c.len(), 9);
        assert!(c[0].depends_on.is_empty());
        for w in c.windows(2) {
            assert_eq!(w[1].depends_on, vec![w[0].task_id.clone()]);
        }
    }
}
