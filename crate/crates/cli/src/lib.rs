//! Command-line driver for the gait planning pipeline.
//!
//! Every stage reads and writes one run directory. The directory is taken
//! from `--run-dir`, then `output_dir` in the config, then
//! `$GAITDIFF_RUN_ROOT/<fingerprint prefix>`, then `./runs/<fingerprint prefix>`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gaitdiff_core::config::RunConfig;

pub mod error;
pub mod report;
pub mod rundir;
pub mod stages;

pub use error::{CliError, CliResult};
pub use stages::{Ctx, Outcome, PolicyKind};

use rundir::{RunDir, RUN_ROOT_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "gaitdiff",
    version,
    about = "Diffusion gait planner: behavior cloning and preference alignment"
)]
pub struct Cli {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config value, e.g. `--set align.lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Run directory.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,

    /// Rerun the stage even when the manifest says it is up to date.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Collect expert demonstrations and fit normalization statistics.
    GenExpert,
    /// Train the diffusion planner by behavior cloning.
    TrainBc,
    /// Roll out the offline planner to gather trajectories for labeling.
    Rollout,
    /// Build preference pairs from the rollouts.
    Label,
    /// Fine-tune the offline planner on the preference pairs.
    Align,
    /// Measure stability and velocity of one policy.
    Eval {
        #[arg(long, default_value = "bc")]
        policy: PolicyKind,
    },
    /// Run the pair-size, label and regularization ablations.
    Ablate,
    /// Aggregate evaluation and ablation results.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenExpert => "gen-expert",
            Command::TrainBc => "train-bc",
            Command::Rollout => "rollout",
            Command::Label => "label",
            Command::Align => "align",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::Report => "report",
        }
    }
}

/// Resolves the run directory for `cfg` following the documented order.
pub fn resolve_run_dir(explicit: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = explicit {
        return p;
    }
    if let Some(p) = &cfg.output_dir {
        return PathBuf::from(p);
    }
    let short = &cfg.fingerprint()[..12];
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(short),
        _ => PathBuf::from("runs").join(short),
    }
}

pub fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    RunConfig::load(cli.config.as_deref(), &cli.overrides)
        .map_err(|e| CliError::Usage(format!("config error:\n{e}")))
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> CliResult<Outcome> {
    let cfg = load_config(&cli)?;
    let dir = RunDir::new(resolve_run_dir(cli.run_dir.clone(), &cfg));
    let _lock = dir.lock()?;
    let ctx = Ctx {
        fingerprint: cfg.fingerprint(),
        cfg,
        dir,
        force: cli.force,
    };
    match cli.command {
        Command::GenExpert => stages::gen_expert(&ctx),
        Command::TrainBc => stages::train_bc(&ctx),
        Command::Rollout => stages::rollout(&ctx),
        Command::Label => stages::label(&ctx),
        Command::Align => stages::align_stage(&ctx),
        Command::Eval { policy } => stages::eval(&ctx, policy),
        Command::Ablate => stages::ablate(&ctx),
        Command::Report => report::report(&ctx),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(Outcome::Ran) => 0,
        Ok(Outcome::UpToDate) => {
            eprintln!("{name}: up to date");
            0
        }
        Err(e) => {
            eprintln!("gaitdiff {name}: {e}");
            e.exit_code()
        }
    }
}
