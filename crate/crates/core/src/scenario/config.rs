use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::epidemic::WorldConfig;
use crate::escrow::Policy;
use crate::ledger::MamMode;
use crate::positioning::{Anchor, ExchangeDelays};
use crate::sensing::{DetectorConfig, StreamParams};

pub const SCHEMA_VERSION: u32 = 1;

/// A complete run description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub escrow: EscrowConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub sensor: StreamParams,
    #[serde(default)]
    pub anchors: AnchorConfig,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub bus: BusConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub hil: HilConfig,
}

fn default_steps() -> u64 {
    150
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscrowConfig {
    pub policy: Policy,
    /// Starting wallet of every agent, tokens.
    pub initial_balance: f64,
}

impl Default for EscrowConfig {
    fn default() -> Self {
        EscrowConfig { policy: Policy::Adaptive, initial_balance: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Anchor positions in metres. Empty means the four room corners.
    pub positions: Vec<[f64; 2]>,
    /// Standard deviation of a ranged distance, metres. Converted to
    /// per-timestamp jitter.
    pub range_sd: f64,
    /// Largest responder clock offset, seconds; each exchange draws one
    /// uniformly from `[0, max_clock_offset]`.
    pub max_clock_offset: f64,
    pub delays: ExchangeDelays,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig { positions: Vec::new(), range_sd: 0.1, max_clock_offset: 1.0, delays: ExchangeDelays::default() }
    }
}

impl AnchorConfig {
    pub fn anchors(&self, world: &WorldConfig) -> Vec<Anchor> {
        if self.positions.is_empty() {
            crate::positioning::corner_anchors(world.room_width, world.room_height)
        } else {
            self.positions.iter().enumerate().map(|(i, &position)| Anchor { id: i as u32, position }).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub mode: MamMode,
    /// Restricted mode only. Used as raw UTF-8 bytes.
    pub side_key: Option<String>,
    pub publish_costs: bool,
    pub publish_transfers: bool,
    /// Include each agent's position in its status records.
    pub publish_positions: bool,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            mode: MamMode::Private,
            side_key: None,
            publish_costs: true,
            publish_transfers: true,
            publish_positions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    /// Gateway subscription bound. Must hold one step of status messages.
    pub queue_capacity: usize,
    /// Per-device buffer while the bus is closed.
    pub outbox_capacity: usize,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig { queue_capacity: 8192, outbox_capacity: 64, retry_attempts: 4, retry_backoff_ms: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write `ledger.json`.
    pub snapshot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), snapshot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HilConfig {
    /// The agent whose data comes from the replayed pipeline.
    pub agent: usize,
    /// Sensor samples consumed per simulation step.
    pub samples_per_step: usize,
}

impl Default for HilConfig {
    fn default() -> Self {
        HilConfig { agent: 0, samples_per_step: 1 }
    }
}

/// One problem found while validating, located by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ScenarioConfig {
    /// A config with every section at its default.
    pub fn new(seed: u64) -> Self {
        toml::from_str(&format!("schema_version = {SCHEMA_VERSION}\nseed = {seed}\n")).expect("minimal config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, Vec<Issue>> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| line_of(text, s.start)).map_or(String::new(), |l| format!("line {l}"));
            vec![Issue { path: at, message: e.message().to_string() }]
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, super::ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::ScenarioError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text).map_err(super::ScenarioError::Config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<(), Vec<Issue>> {
        let mut issues = Vec::new();
        let mut push = |path: &str, message: String| issues.push(Issue { path: path.into(), message });
        if self.schema_version != SCHEMA_VERSION {
            push("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version));
        }
        if self.steps == 0 {
            push("steps", "must be at least 1".into());
        }
        if let Err(e) = self.world.validate() {
            push("world", e.0);
        }
        if let Err(e) = self.controller.validate() {
            push("controller", e.to_string());
        }
        if let Err(e) = self.escrow.policy.validate() {
            push("escrow.policy", e.to_string());
        }
        let b = self.escrow.initial_balance;
        if !(0.0..1e12).contains(&b) {
            push("escrow.initial_balance", format!("must be in [0, 1e12) tokens, got {b}"));
        }
        if let Err(e) = self.detector.validate() {
            push("detector", e);
        }
        let s = &self.sensor;
        if [s.eco2_sd, s.tvoc_sd].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            push("sensor", "noise levels must be finite and non-negative".into());
        }
        let a = &self.anchors;
        if !a.positions.is_empty() && a.positions.len() < 3 {
            push("anchors.positions", format!("need at least 3 anchors, got {}", a.positions.len()));
        }
        if a.positions.iter().flatten().any(|v| !v.is_finite()) {
            push("anchors.positions", "coordinates must be finite".into());
        }
        if !(a.range_sd >= 0.0 && a.range_sd.is_finite()) {
            push("anchors.range_sd", "must be finite and non-negative".into());
        }
        if !(a.max_clock_offset >= 0.0 && a.max_clock_offset <= 1e6) {
            push("anchors.max_clock_offset", "must be in [0, 1e6] seconds".into());
        }
        if !(a.delays.responder_reply > 0.0 && a.delays.initiator_reply > 0.0) {
            push("anchors.delays", "reply delays must be positive".into());
        }
        match (self.ledger.mode, &self.ledger.side_key) {
            (MamMode::Restricted, None) => push("ledger.side_key", "required in restricted mode".into()),
            (MamMode::Public | MamMode::Private, Some(_)) => {
                push("ledger.side_key", "only used in restricted mode".into())
            }
            _ => {}
        }
        if self.bus.queue_capacity < self.world.n_agents + 2 {
            push(
                "bus.queue_capacity",
                format!("must be at least n_agents + 2 = {}, got {}", self.world.n_agents + 2, self.bus.queue_capacity),
            );
        }
        if self.bus.outbox_capacity == 0 {
            push("bus.outbox_capacity", "must be at least 1".into());
        }
        if self.bus.retry_attempts == 0 {
            push("bus.retry_attempts", "must be at least 1".into());
        }
        if self.hil.agent >= self.world.n_agents {
            push("hil.agent", format!("agent {} does not exist (n_agents = {})", self.hil.agent, self.world.n_agents));
        }
        if self.hil.samples_per_step == 0 {
            push("hil.samples_per_step", "must be at least 1".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
