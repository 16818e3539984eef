//! Seeded random walks over legal event sequences, for property suites.
//!
//! Each step picks uniformly among the moves the current projection allows,
//! so every generated log folds cleanly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::event_store::{Action, EventRecord, NewEvent, Profile, ORCHESTRATOR_ACTOR};
use crate::projection::{
    apply_event, InitPayload, ProjectSeed, Roadmap, TaskKind, TaskSeed, TaskState,
};

const AGENTS: [&str; 3] = ["agent-a", "agent-b", "agent-c"];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len() as u32) as usize]
}

/// A random DAG catalog: every dependency points at an earlier task.
pub fn random_catalog(rng: &mut ChaCha8Rng, profile: Profile, size: usize) -> Vec<TaskSeed> {
    (0..size)
        .map(|i| {
            let depends_on = (0..i)
                .filter(|_| rng.gen_ratio(1, 4))
                .map(|d| format!("T-{d:03}"))
                .collect::<Vec<_>>();
            let seeded_ready =
                profile == Profile::Simplified && depends_on.is_empty() && rng.gen_bool(0.5);
            TaskSeed {
                task_id: format!("T-{i:03}"),
                kind: *pick(rng, &TaskKind::ALL),
                title: format!("task {i}"),
                depends_on,
                files: vec![],
                phase_id: (profile == Profile::Simplified).then(|| format!("PH-{}", i % 3)),
                state: seeded_ready.then_some(TaskState::Ready),
            }
        })
        .collect()
}

fn ts(step: usize) -> String {
    format!(
        "2026-01-01T{:02}:{:02}:{:02}Z",
        (step / 3600) % 24,
        (step / 60) % 60,
        step % 60
    )
}

fn legal_moves(state: &Roadmap, step: usize, rng: &mut ChaCha8Rng) -> Vec<NewEvent> {
    let t = ts(step);
    let mut moves = Vec::new();
    let agent = *pick(rng, &AGENTS);
    for task in &state.tasks {
        let id = task.task_id.as_str();
        let deps_ok = state.dependencies_done(task).is_ok();
        match (state.profile(), task.state) {
            (Profile::Full, TaskState::Todo | TaskState::Blocked) if deps_ok => {
                moves.push(
                    NewEvent::system(Action::AttemptCreate, &t)
                        .agent_id(agent)
                        .task(id),
                );
            }
            (Profile::Full, TaskState::InProgress) => {
                let done = json!({"state": "done"});
                moves.push(
                    NewEvent::system(Action::TaskUpdate, &t)
                        .task(id)
                        .payload(done),
                );
                moves.push(
                    NewEvent::system(Action::TaskUpdate, &t)
                        .task(id)
                        .payload(json!({"state": "blocked"})),
                );
                moves.push(NewEvent::system(Action::AttemptTimeout, &t).task(id));
                moves.push(
                    NewEvent::system(Action::OrchestratorDispatch, &t)
                        .agent_id(agent)
                        .task(id),
                );
                moves.push(
                    NewEvent::new(Action::AgentResult, &t)
                        .actor(agent)
                        .task(id)
                        .payload(json!({"summary": "s"})),
                );
            }
            (Profile::Simplified, TaskState::Backlog) if deps_ok => {
                moves.push(NewEvent::new(Action::Promote, &t).task(id));
            }
            (Profile::Simplified, TaskState::Ready) => {
                let holder = task.claimed_by.as_deref().unwrap_or(agent);
                moves.push(NewEvent::new(Action::Claim, &t).task(id).agent_id(holder));
                let ok = BTreeMap::from([("checked".to_owned(), true)]);
                moves.push(
                    NewEvent::new(Action::Complete, &t)
                        .task(id)
                        .agent_id(holder)
                        .acceptance(ok),
                );
            }
            _ => {}
        }
    }
    if state.profile() == Profile::Simplified {
        for phase in state.phases() {
            let all_done = phase
                .task_ids
                .iter()
                .all(|id| state.task(id).is_some_and(|t| t.state == TaskState::Done));
            if !phase.complete && all_done {
                moves.push(
                    NewEvent::new(Action::PhaseComplete, &t)
                        .payload(json!({"phase_id": phase.phase_id})),
                );
            }
        }
    } else {
        moves.push(
            NewEvent::new(Action::OutputRejected, &t)
                .actor(ORCHESTRATOR_ACTOR)
                .payload(json!({})),
        );
    }
    moves
}

/// A legal log of at most `steps + 1` events for a random catalog of
/// `size` tasks, fully determined by `seed`.
pub fn random_walk(profile: Profile, seed: u64, size: usize, steps: usize) -> Vec<EventRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = InitPayload {
        run_id: format!("run-walk-{seed}"),
        project: ProjectSeed {
            name: "walk".into(),
            audit_scope: "project".into(),
        },
        version: None,
        tasks: random_catalog(&mut rng, profile, size),
    };
    let opening = NewEvent::new(profile.initial_action(), ts(0))
        .actor(ORCHESTRATOR_ACTOR)
        .payload(serde_json::to_value(init).expect("init payload serializes"))
        .with_seq(0);
    let mut state = apply_event(None, &opening).expect("random catalogs are valid");
    let mut log = vec![opening];
    for step in 1..=steps {
        let moves = legal_moves(&state, step, &mut rng);
        if moves.is_empty() {
            break;
        }
        let ev = moves[rng.gen_range(0..moves.len() as u32) as usize]
            .clone()
            .with_seq(log.len() as u64);
        state = apply_event(Some(&state), &ev).expect("walks only take legal moves");
        log.push(ev);
    }
    log
}

/// Events that would move a done task out of `done`, one per applicable action.
pub fn regression_events(profile: Profile, task_id: &str, ts: &str) -> Vec<NewEvent> {
    match profile {
        Profile::Full => vec![
            NewEvent::system(Action::AttemptCreate, ts)
                .agent_id(AGENTS[0])
                .task(task_id),
            NewEvent::system(Action::OrchestratorDispatch, ts)
                .agent_id(AGENTS[0])
                .task(task_id),
            NewEvent::system(Action::AttemptTimeout, ts).task(task_id),
            NewEvent::system(Action::TaskUpdate, ts)
                .task(task_id)
                .payload(json!({"state": "todo"})),
            NewEvent::system(Action::TaskUpdate, ts)
                .task(task_id)
                .payload(json!({"state": "done"})),
        ],
        Profile::Simplified => {
            let ok = BTreeMap::from([("checked".to_owned(), true)]);
            vec![
                NewEvent::new(Action::Promote, ts).task(task_id),
                NewEvent::new(Action::Claim, ts)
                    .task(task_id)
                    .agent_id(AGENTS[0]),
                NewEvent::new(Action::Complete, ts)
                    .task(task_id)
                    .agent_id(AGENTS[0])
                    .acceptance(ok),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::project;

    #[test]
    fn walks_are_deterministic_and_fold() {
        for profile in [Profile::Full, Profile::Simplified] {
            let a = random_walk(profile, 42, 8, 60);
            assert_eq!(a, random_walk(profile, 42, 8, 60));
            project(&a).unwrap();
        }
    }

    #[test]
    fn walks_reach_done() {
        let done: usize = (0..20)
            .map(|s| {
                project(&random_walk(Profile::Simplified, s, 6, 80))
                    .unwrap()
                    .count_in(TaskState::Done)
            })
            .sum();
        assert!(done > 0);
    }
}
