use std::fs;
use std::io::{self, Read};
use std::path::Path;

use anyhow::{bail, Context, Result};
use esaa_core::canonical::to_canonical;
use esaa_core::clock::{format_ts, parse_ts_strict, system_now, Timestamp};
use esaa_core::event_store::{
    encode_record, read_all, EventRecord, Profile, ReadError, StoreError,
};
use esaa_core::orchestrator::{init, InitOptions, Orchestrator, OrchestratorError, ProjectLayout};
use esaa_core::projection::{project, Roadmap, TaskSeed, TaskState, VerifyStatus};
use esaa_core::sim::{run_scenario, BuiltinCatalog, ScenarioConfig, CS1_PROJECT, CS2_PROJECT};
use esaa_core::verify::{replay_records_to, VerifyError};
use serde::Serialize;

use crate::cli::{Cli, Command, Format, InitArgs, LogArgs, RunArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_OPERATIONAL: u8 = 1;
pub const EXIT_MISMATCH: u8 = 2;
pub const EXIT_CORRUPTED: u8 = 3;
pub const EXIT_REJECTED: u8 = 4;

/// What a command prints on stdout and the code it exits with.
pub struct Output {
    pub stdout: String,
    pub code: u8,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Output {
            stdout,
            code: EXIT_OK,
        }
    }
}

fn verify_code(status: VerifyStatus) -> u8 {
    match status {
        VerifyStatus::Ok => EXIT_OK,
        VerifyStatus::Mismatch => EXIT_MISMATCH,
        VerifyStatus::Corrupted => EXIT_CORRUPTED,
    }
}

/// Exit code for a failed command: 3 when the log itself is damaged, 1 otherwise.
pub fn failure_code(err: &anyhow::Error) -> u8 {
    fn store(e: &StoreError) -> bool {
        matches!(e, StoreError::Corrupted(_))
    }
    fn read(e: &ReadError) -> bool {
        matches!(e, ReadError::Corrupt(_))
    }
    fn verify(e: &VerifyError) -> bool {
        matches!(e, VerifyError::Corrupted(_)) || matches!(e, VerifyError::Store(s) if store(s))
    }
    let corrupted = err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<OrchestratorError>() {
            return match e {
                OrchestratorError::Read(r) => read(r),
                OrchestratorError::Store(s) => store(s),
                OrchestratorError::Verify(v) => verify(v),
                _ => false,
            };
        }
        cause.downcast_ref::<ReadError>().is_some_and(read)
            || cause.downcast_ref::<StoreError>().is_some_and(store)
            || cause.downcast_ref::<VerifyError>().is_some_and(verify)
    });
    if corrupted {
        EXIT_CORRUPTED
    } else {
        EXIT_OPERATIONAL
    }
}

fn canonical_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(String::from_utf8(to_canonical(value)?.into_bytes())?)
}

fn now(cli: &Cli) -> Result<Timestamp> {
    match &cli.at {
        Some(at) => Ok(parse_ts_strict(at)?),
        None => Ok(system_now()),
    }
}

fn log_records(root: &Path) -> Result<Vec<EventRecord>> {
    let layout = ProjectLayout::new(root);
    if !layout.is_initialized() {
        return Err(OrchestratorError::NotInitialized(root.to_owned()).into());
    }
    Ok(read_all(&layout.log_path())?)
}

fn check_profile(cli: &Cli, actual: Profile) -> Result<()> {
    match cli.profile.map(Profile::from) {
        Some(want) if want != actual => bail!("project uses the {actual} profile, not {want}"),
        _ => Ok(()),
    }
}

fn open(cli: &Cli) -> Result<Orchestrator> {
    let orch = Orchestrator::open(&cli.root)?;
    if cli.profile.is_some() {
        check_profile(cli, orch.roadmap()?.profile())?;
    }
    Ok(orch)
}

pub fn execute(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Init(args) => cmd_init(cli, args),
        Command::Submit(args) => {
            let orch = open(cli)?;
            let raw = read_envelope(&args.envelope)?;
            let outcome = orch.handle_agent_output(&raw, &now(cli)?)?;
            let stdout = match cli.format {
                Format::Json => canonical_line(&outcome)?,
                Format::Text if outcome.is_accepted() => {
                    let mut s = format!("accepted: events {:?}\n", outcome.events_appended);
                    for r in &outcome.receipts {
                        s += &format!(
                            "wrote {} ({} bytes, {})\n",
                            r.path, r.bytes_written, r.content_hash
                        );
                    }
                    s
                }
                Format::Text => {
                    let mut s = format!("rejected: events {:?}\n", outcome.events_appended);
                    for v in &outcome.violations {
                        s += &format!("{v}\n");
                    }
                    s
                }
            };
            let code = if outcome.is_accepted() {
                EXIT_OK
            } else {
                EXIT_REJECTED
            };
            Ok(Output { stdout, code })
        }
        Command::Dispatch(args) => {
            let attempt = open(cli)?.dispatch(&args.task_id, &args.agent, &now(cli)?)?;
            Ok(Output::ok(match cli.format {
                Format::Json => canonical_line(&attempt)?,
                Format::Text => format!(
                    "{} {} {} {} expires {}\n",
                    attempt.attempt_id,
                    attempt.correlation_id,
                    attempt.task_id,
                    attempt.agent,
                    format_ts(&attempt.expires_at())
                ),
            }))
        }
        Command::Run(args) => cmd_run(cli, args),
        Command::Verify => {
            let report = open(cli)?.verify(&now(cli)?)?;
            let stdout = match cli.format {
                Format::Json => canonical_line(&report)?,
                Format::Text => {
                    let mut s = report.verify_status.as_str().to_owned();
                    if let Some(h) = &report.computed_hash {
                        s += &format!(" {h}");
                    }
                    if let Some(d) = &report.first_divergence {
                        s += &format!("\nfirst divergence in {}: {}", d.section, d.detail);
                    }
                    if let Some(c) = &report.corruption {
                        s += &format!("\n{c}");
                    }
                    s + "\n"
                }
            };
            Ok(Output {
                stdout,
                code: verify_code(report.verify_status),
            })
        }
        Command::Replay(args) => {
            let records = log_records(&cli.root)?;
            let state = replay_records_to(&records, args.seq)?;
            // The projection document is canonical JSON in either format.
            Ok(Output::ok(canonical_line(&state)?))
        }
        Command::Status => {
            let state = project(&log_records(&cli.root)?)?;
            check_profile(cli, state.profile())?;
            Ok(Output::ok(match cli.format {
                Format::Json => canonical_line(&StatusDoc::of(&state))?,
                Format::Text => status_line(&state) + "\n",
            }))
        }
        Command::Log(args) => cmd_log(cli, args),
    }
}

fn read_envelope(path: &Path) -> Result<Vec<u8>> {
    if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        io::stdin()
            .read_to_end(&mut buf)
            .context("reading envelope from stdin")?;
        Ok(buf)
    } else {
        fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn cmd_init(cli: &Cli, args: &InitArgs) -> Result<Output> {
    let builtin = args.builtin.map(BuiltinCatalog::from);
    let profile = match (cli.profile, builtin) {
        (Some(p), _) => Profile::from(p),
        (None, Some(BuiltinCatalog::Cs2)) => Profile::Simplified,
        (None, _) => Profile::Full,
    };
    let tasks: Vec<TaskSeed> = match (&args.catalog, builtin) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_yaml::from_str(&text)
                .with_context(|| format!("parsing catalog {}", path.display()))?
        }
        (None, Some(b)) => b.tasks(),
        (None, None) => Vec::new(),
    };
    let name = match (&args.name, builtin) {
        (Some(n), _) => n.clone(),
        (None, Some(BuiltinCatalog::Cs1)) => CS1_PROJECT.to_owned(),
        (None, Some(BuiltinCatalog::Cs2)) => CS2_PROJECT.to_owned(),
        (None, None) => bail!("--name is required without --builtin"),
    };
    let mut opts = InitOptions::new(profile, name, now(cli)?).tasks(tasks);
    opts.run_id = args.run_id.clone();
    let orch = init(&cli.root, opts)?;
    let state = orch.roadmap()?;
    Ok(Output::ok(match cli.format {
        Format::Json => canonical_line(&StatusDoc::of(&state))?,
        Format::Text => format!(
            "initialized {} ({}) run {}: {} tasks\n",
            state.project.name,
            profile,
            state.run.run_id,
            state.tasks.len()
        ),
    }))
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<Output> {
    let cfg = ScenarioConfig::load(&args.scenario)?;
    if let Some(p) = cli.profile {
        if Profile::from(p) != cfg.profile {
            bail!("scenario {} uses the {} profile", cfg.name, cfg.profile);
        }
    }
    let report = run_scenario(&cfg, &cli.root)?;
    let dir = args
        .report_dir
        .clone()
        .unwrap_or_else(|| cli.root.join("reports"));
    let path = report.write_to(&dir)?;
    eprintln!("report written to {}", path.display());
    let stdout = match cli.format {
        Format::Json => canonical_line(&report)?,
        Format::Text => {
            let states: Vec<String> = report
                .final_state_index
                .iter()
                .map(|(k, v)| format!("{k} {v}"))
                .collect();
            format!(
                "{}: {} events, {} submissions, {} rejected; {}; run {:?}; verify {}\n",
                report.scenario,
                report.wall_events,
                report.submissions,
                report.rejected_count,
                states.join(" / "),
                report.run_status,
                report.verify_status.as_str()
            )
        }
    };
    Ok(Output {
        stdout,
        code: verify_code(report.verify_status),
    })
}

fn cmd_log(cli: &Cli, args: &LogArgs) -> Result<Output> {
    let records = log_records(&cli.root)?;
    let keep = |r: &&EventRecord| {
        args.agent.as_deref().is_none_or(|a| r.author() == Some(a))
            && args
                .task
                .as_deref()
                .is_none_or(|t| r.task_id.as_deref() == Some(t))
            && args.action.as_deref().is_none_or(|a| r.action == a)
    };
    let mut out = String::new();
    for r in records.iter().filter(keep) {
        match cli.format {
            Format::Json => {
                out += std::str::from_utf8(&encode_record(r)?)?;
            }
            Format::Text => {
                out += &format!(
                    "{:>5} {} {:<22} {:<8} {}\n",
                    r.event_seq,
                    r.ts,
                    r.action,
                    r.task_id.as_deref().unwrap_or("-"),
                    r.author().unwrap_or("-")
                );
            }
        }
    }
    Ok(Output::ok(out))
}

/// Counts in display order: terminal state first.
fn state_counts(state: &Roadmap) -> Vec<(TaskState, usize)> {
    TaskState::states_of(state.profile())
        .iter()
        .rev()
        .map(|s| (*s, state.count_in(*s)))
        .collect()
}

fn status_line(state: &Roadmap) -> String {
    let counts: Vec<String> = state_counts(state)
        .iter()
        .map(|(s, n)| format!("{s} {n}"))
        .collect();
    let mut line = counts.join(" / ");
    let phases = state.phases();
    if !phases.is_empty() {
        let complete = phases.iter().filter(|p| p.complete).count();
        line += &format!("; phases {complete}/{}", phases.len());
    }
    if state.profile() == Profile::Full {
        line += &format!(
            "; run {}; verify {}",
            run_status_str(state),
            state.run.verify_status.as_str()
        );
    }
    line
}

fn run_status_str(state: &Roadmap) -> String {
    serde_json::to_value(state.run.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[derive(Serialize)]
struct StatusDoc {
    profile: Profile,
    project: String,
    run_id: String,
    run_status: String,
    verify_status: VerifyStatus,
    last_event_seq: u64,
    state_index: std::collections::BTreeMap<String, usize>,
    phases_complete: usize,
    phases_total: usize,
}

impl StatusDoc {
    fn of(state: &Roadmap) -> Self {
        let phases = state.phases();
        StatusDoc {
            profile: state.profile(),
            project: state.project.name.clone(),
            run_id: state.run.run_id.clone(),
            run_status: run_status_str(state),
            verify_status: state.run.verify_status,
            last_event_seq: state.run.last_event_seq,
            state_index: state_counts(state)
                .into_iter()
                .map(|(s, n)| (s.as_str().to_owned(), n))
                .collect(),
            phases_complete: phases.iter().filter(|p| p.complete).count(),
            phases_total: phases.len(),
        }
    }
}
