//! Config-driven pipeline around `obliq-core`: data generation, training,
//! evaluation and closed-loop control, each writing artifacts with
//! provenance sidecars into one output directory.

pub mod commands;
pub mod config;
mod error;
pub mod provenance;
pub mod recipes;
pub mod verify;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::{ControlTask, EvalTask};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "obliq", version, about = "Linear embedding models with oblique projections")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate trajectories and write data.csv.
    GenData(RunArgs),
    /// Fit the configured model and write model.json.
    Train(RunArgs),
    /// Evaluate a trained model.
    Eval {
        #[arg(long, value_enum)]
        task: EvalArg,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Closed-loop control on the true system with a trained model.
    Control {
        #[arg(long, value_enum)]
        task: ControlArg,
        #[command(flatten)]
        run: RunArgs,
    },
    /// gen-data, train and every step listed under [run].
    Run(RunArgs),
    /// Check the build against analytic oracles.
    Verify,
    /// List bundled recipes, or print one.
    Recipes { name: Option<String> },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "recipe", required_unless_present = "recipe")]
    pub config: Option<PathBuf>,
    /// Bundled recipe name (see `obliq recipes`).
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalArg {
    Predict,
    Contour,
    Basin,
    Forecast,
    InputSweep,
    Sensitivity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ControlArg {
    Lqr,
    Servo,
    Mpc,
}

impl From<EvalArg> for EvalTask {
    fn from(a: EvalArg) -> Self {
        match a {
            EvalArg::Predict => EvalTask::Predict,
            EvalArg::Contour => EvalTask::Contour,
            EvalArg::Basin => EvalTask::Basin,
            EvalArg::Forecast => EvalTask::Forecast,
            EvalArg::InputSweep => EvalTask::InputSweep,
            EvalArg::Sensitivity => EvalTask::Sensitivity,
        }
    }
}

impl From<ControlArg> for ControlTask {
    fn from(a: ControlArg) -> Self {
        match a {
            ControlArg::Lqr => ControlTask::Lqr,
            ControlArg::Servo => ControlTask::Servo,
            ControlArg::Mpc => ControlTask::Mpc,
        }
    }
}

/// Load the config named by `args` and apply the command-line overrides.
pub fn resolve(args: &RunArgs) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = match (&args.config, &args.recipe) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => {
            let text = recipes::recipe(name).ok_or_else(|| CliError::Config {
                path: "--recipe".into(),
                msg: format!("unknown recipe `{name}`"),
            })?;
            RunConfig::from_toml(text)?
        }
        (None, None) => {
            return Err(CliError::Config { path: "--config".into(), msg: "pass --config or --recipe".into() });
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config { path: "out".into(), msg: "no output directory; pass --out".into() })?;
    Ok((cfg, out))
}

pub fn execute(cli: &Cli, mut stdout: impl Write) -> CliResult<()> {
    let written = match &cli.command {
        Command::GenData(a) => {
            let (cfg, out) = resolve(a)?;
            commands::gen_data(&cfg, &out)?
        }
        Command::Train(a) => {
            let (cfg, out) = resolve(a)?;
            commands::train(&cfg, &out)?
        }
        Command::Eval { task, run } => {
            let (cfg, out) = resolve(run)?;
            commands::eval(&cfg, &out, (*task).into())?
        }
        Command::Control { task, run } => {
            let (cfg, out) = resolve(run)?;
            commands::control(&cfg, &out, (*task).into())?
        }
        Command::Run(a) => {
            let (cfg, out) = resolve(a)?;
            commands::run_all(&cfg, &out)?
        }
        Command::Verify => {
            let checks = verify::run_checks();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                let _ = writeln!(stdout, "{tag} {}: {}", c.name, c.detail);
            }
            if failed > 0 {
                return Err(CliError::Verify(failed));
            }
            return Ok(());
        }
        Command::Recipes { name } => {
            match name {
                Some(n) => {
                    let text = recipes::recipe(n).ok_or_else(|| CliError::Config {
                        path: "name".into(),
                        msg: format!("unknown recipe `{n}`"),
                    })?;
                    let _ = write!(stdout, "{text}");
                }
                None => {
                    for (n, _) in recipes::RECIPES {
                        let _ = writeln!(stdout, "{n}");
                    }
                }
            }
            return Ok(());
        }
    };
    commands::print_written(&written, stdout);
    Ok(())
}
