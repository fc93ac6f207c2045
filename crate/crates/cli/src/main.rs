//! `maskbond`: run scenarios, replay recorded sensor data, check ledger
//! snapshots and solve single position fixes.
//!
//! Exit status: 0 on success, 2 for bad configuration or input, 3 when a
//! run breaks an invariant or a snapshot fails verification, 4 for I/O.
//! Log verbosity comes from `MASKBOND_LOG` (`error` .. `trace`).

mod position;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maskbond::ledger::{inspect, read_snapshot, SnapshotError};
use maskbond::scenario::{run_hil_replay, run_scenario, write_outputs, HilInput, RunOutput, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(name = "maskbond", version, about = "Token-bond mask compliance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop scenario and write its CSV and JSON outputs.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// As `simulate`, with one agent driven by a recorded gas-sensor file.
    HilReplay {
        config: PathBuf,
        replay: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Ledger snapshot tools.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Solve one position from anchor distances or ranging timestamps.
    Position { file: PathBuf },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Verify a snapshot and print DAG and channel statistics as JSON.
    Inspect { snapshot: PathBuf },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Overrides {
    fn load(&self, path: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = ScenarioConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.outputs.dir = d.clone();
        }
        cfg.validate().map_err(ScenarioError::Config)?;
        Ok(cfg)
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn finish(out: &RunOutput) -> Result<(), Failure> {
    let files = write_outputs(out, &out.config.outputs.dir)?;
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    let s = &out.summary;
    println!(
        "seed {} steps {} agents {}: peak infected {:.3}, mean compliance {:.3}, {} ledger transactions",
        s.seed, s.steps, s.n_agents, s.peak_infected_fraction, s.mean_compliance, s.ledger.transactions
    );
    println!("outputs in {}", out.config.outputs.dir.display());
    Ok(())
}

fn ledger_inspect(path: &Path) -> Result<(), Failure> {
    let snap = read_snapshot(path).map_err(|e| {
        let code = match e {
            SnapshotError::Io(_) => 4,
            SnapshotError::Parse(_) | SnapshotError::Unsupported { .. } => 2,
            SnapshotError::BadRecord { .. } | SnapshotError::Invalid(_) => 3,
        };
        Failure { code, message: format!("{}: {e}", path.display()) }
    })?;
    let report = inspect(&snap);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 3, message: format!("{} violation(s)", report.violations.len()) })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, overrides } => finish(&run_scenario(&overrides.load(&config)?)?),
        Command::HilReplay { config, replay, overrides } => {
            let cfg = overrides.load(&config)?;
            let input = HilInput::from_csv(&replay)?;
            for w in &input.warnings {
                log::warn!("{} line {}: {}", replay.display(), w.line, w.message);
            }
            finish(&run_hil_replay(&cfg, input)?)
        }
        Command::Ledger { command: LedgerCommand::Inspect { snapshot } } => ledger_inspect(&snapshot),
        Command::Position { file } => position::run(&file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MASKBOND_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
