use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use esaa_core::event_store::Profile;
use esaa_core::sim::BuiltinCatalog;

#[derive(Debug, Parser)]
#[command(
    name = "esaa",
    version,
    about = "Event-sourced orchestration of contract-bound agents"
)]
pub struct Cli {
    /// Project root holding `.roadmap/`.
    #[arg(long, global = true, env = "ESAA_ROOT", default_value = ".")]
    pub root: PathBuf,

    /// Output format for stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Protocol profile. `init` creates it; other commands refuse a project of another profile.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,

    /// Timestamp for events this command appends (RFC 3339 with offset). Defaults to wall time.
    #[arg(long, global = true)]
    pub at: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    #[value(name = "full", alias = "full-0.3.0")]
    Full,
    Simplified,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Profile {
        match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Simplified => Profile::Simplified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuiltinArg {
    Cs1,
    Cs2,
}

impl From<BuiltinArg> for BuiltinCatalog {
    fn from(b: BuiltinArg) -> BuiltinCatalog {
        match b {
            BuiltinArg::Cs1 => BuiltinCatalog::Cs1,
            BuiltinArg::Cs2 => BuiltinCatalog::Cs2,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create `.roadmap/` with its single opening event.
    Init(InitArgs),
    /// Run one agent output envelope through the pipeline.
    Submit(SubmitArgs),
    /// Open an attempt for an agent on a task (full profile).
    Dispatch(DispatchArgs),
    /// Execute a scenario file end to end against a fresh root.
    Run(RunArgs),
    /// Replay the log and compare with the stored read-model.
    Verify,
    /// Print the projection as of an event sequence number.
    Replay(ReplayArgs),
    /// Print state counts and phase completion.
    Status,
    /// Print events, optionally filtered.
    Log(LogArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Project name. Builtin catalogs supply their own.
    #[arg(long)]
    pub name: Option<String>,
    /// Task catalog: a YAML or JSON list of task seeds.
    #[arg(long, conflicts_with = "builtin")]
    pub catalog: Option<PathBuf>,
    /// One of the bundled case-study catalogs.
    #[arg(long, value_enum)]
    pub builtin: Option<BuiltinArg>,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    /// Envelope file, or `-` for standard input.
    pub envelope: PathBuf,
}

#[derive(Debug, Args)]
pub struct DispatchArgs {
    pub task_id: String,
    /// Agent identity, `agent-*`.
    pub agent: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario YAML file.
    pub scenario: PathBuf,
    /// Directory for `<scenario>.json`; defaults to `<root>/reports`.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub seq: u64,
}

#[derive(Debug, Args)]
pub struct LogArgs {
    #[arg(long)]
    pub agent: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub action: Option<String>,
}
