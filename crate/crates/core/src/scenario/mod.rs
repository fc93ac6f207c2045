//! Closed-loop scenario runner.
//!
//! One step, in order:
//!
//! 1. every agent's mask bit is drawn (or, for a replayed agent, detected
//!    from gas readings) and published on `mask/<i>/status`;
//! 2. the gateway bridges the statuses onto per-agent ledger channels;
//! 3. the controller reads each channel and updates the costs;
//! 4. escrow settles bonds against the bits it read and re-stakes at the
//!    new prices;
//! 5. costs and transfers are published; the world moves and infects.
//!
//! The controller and escrow see only what reached the ledger.

mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};

pub use config::{
    AnchorConfig, BusConfig, EscrowConfig, HilConfig, Issue, LedgerConfig, OutputConfig, ScenarioConfig,
    SCHEMA_VERSION,
};
pub use output::{write_outputs, EscrowSummary, HilSummary, LedgerSummary, RunSummary};
pub use run::{run_hil_replay, run_scenario, CostRow, HilTrace, RunOutput};

use crate::sensing::{read_replay, synth_stream, GasSample, ReplayWarning, Schedule, StreamParams};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid config:\n{}", join(.0))]
    Config(Vec<Issue>),
    #[error("invariant broken in {module}: {message}")]
    Invariant { module: &'static str, message: String },
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
}

fn join(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ScenarioError {
    /// 2 for configuration, 3 for a broken invariant, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 2,
            ScenarioError::Invariant { .. } => 3,
            ScenarioError::Io(..) => 4,
        }
    }

    pub(crate) fn invariant(module: &'static str, message: impl ToString) -> Self {
        ScenarioError::Invariant { module, message: message.to_string() }
    }

    pub(crate) fn config(path: &str, message: impl ToString) -> Self {
        ScenarioError::Config(vec![Issue { path: path.into(), message: message.to_string() }])
    }
}

/// Gas readings for the replayed agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HilInput {
    pub samples: Vec<GasSample>,
    /// Rows skipped while reading.
    pub warnings: Vec<ReplayWarning>,
}

impl HilInput {
    pub fn from_csv(path: &Path) -> Result<Self, ScenarioError> {
        let file = std::fs::File::open(path).map_err(|e| ScenarioError::Io(path.to_path_buf(), e))?;
        let (samples, warnings) =
            read_replay(file).map_err(|e| ScenarioError::Io(path.to_path_buf(), std::io::Error::other(e)))?;
        Ok(HilInput { samples, warnings })
    }

    pub fn synthetic(schedule: &Schedule, params: &StreamParams, seed: u64) -> Self {
        HilInput { samples: synth_stream(schedule, params, seed), warnings: Vec::new() }
    }
}
