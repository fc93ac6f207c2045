use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{CostRow, HilTrace, RunOutput};
use super::{ScenarioConfig, ScenarioError, SCHEMA_VERSION};
use crate::bus::GatewayCounters;
use crate::controller::Controller;
use crate::epidemic::{Counts, Series};
use crate::escrow::{to_tokens, Escrow, Transfer, TransferKind};
use crate::ledger::{write_snapshot, Ledger};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscrowSummary {
    pub policy: &'static str,
    pub deposited: f64,
    pub refunded: f64,
    pub forfeited: f64,
    pub returned: f64,
    /// Forfeited tokens not returned by the end of the run.
    pub pool: f64,
    pub exclusions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub transactions: usize,
    pub tips: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HilSummary {
    pub agent: usize,
    pub samples_used: usize,
    pub replay_warnings: usize,
    pub detector_dropped: u64,
    pub reported_steps: usize,
    pub masked_steps: usize,
    pub fixes: usize,
    /// Over steps with a fix.
    pub position_rmse: Option<f64>,
    pub deposited: f64,
    pub refunded: f64,
    pub forfeited: f64,
    pub final_balance: f64,
}

/// Everything here can be recomputed from the CSV outputs except the
/// ledger and bridge figures (from `ledger.json` and the run itself) and
/// the wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: u64,
    pub n_agents: usize,
    pub final_counts: Counts,
    pub peak_infected: usize,
    pub peak_infected_fraction: f64,
    /// Mean over steps of the per-step compliance the controller read.
    pub mean_compliance: f64,
    pub final_global_cost: f64,
    pub final_mean_individual_cost: f64,
    pub controller_gaps: u64,
    pub escrow: EscrowSummary,
    pub ledger: LedgerSummary,
    pub bridge: GatewayCounters,
    pub outbox_dropped: u64,
    pub hil: Option<HilSummary>,
    pub wall_clock_seconds: f64,
}

fn tokens(m: u128) -> f64 {
    to_tokens(u64::try_from(m).unwrap_or(u64::MAX))
}

fn agent_sum(transfers: &[Transfer], agent: usize, kind: TransferKind) -> f64 {
    tokens(transfers.iter().filter(|t| t.agent == agent && t.kind == kind).map(|t| u128::from(t.amount)).sum())
}

#[allow(clippy::too_many_arguments)]
pub(super) fn summarize(
    cfg: &ScenarioConfig,
    steps: u64,
    epidemic: &Series,
    costs: &[CostRow],
    transfers: &[Transfer],
    ctl: &Controller,
    escrow: &Escrow,
    ledger: &Ledger,
    bridge: GatewayCounters,
    outbox_dropped: u64,
    hil: Option<&HilTrace>,
    wall_clock_seconds: f64,
) -> RunSummary {
    let last = epidemic.rows.last().expect("row 0 always present");
    let step_means: Vec<f64> = costs.iter().filter_map(|c| c.mean_compliance).collect();
    let t = escrow.totals();
    let tangle = ledger.read();
    let hil = hil.map(|h| {
        let errs: Vec<f64> = h
            .fixes
            .iter()
            .zip(&h.truth)
            .filter_map(|(f, t)| f.map(|f| (f[0] - t[0]).powi(2) + (f[1] - t[1]).powi(2)))
            .collect();
        HilSummary {
            agent: h.agent,
            samples_used: h.samples_used,
            replay_warnings: h.replay_warnings,
            detector_dropped: h.detector_dropped,
            reported_steps: h.bits.iter().flatten().count(),
            masked_steps: h.bits.iter().flatten().filter(|&&b| b).count(),
            fixes: errs.len(),
            position_rmse: (!errs.is_empty()).then(|| (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()),
            deposited: agent_sum(transfers, h.agent, TransferKind::Deposit),
            refunded: agent_sum(transfers, h.agent, TransferKind::Refund),
            forfeited: agent_sum(transfers, h.agent, TransferKind::Forfeit),
            final_balance: to_tokens(escrow.balance(h.agent)),
        }
    });
    RunSummary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        steps,
        n_agents: cfg.world.n_agents,
        final_counts: Counts {
            susceptible: last.susceptible,
            infected: last.infected,
            immune_slight: last.immune_slight,
            immune_serious: last.immune_serious,
        },
        peak_infected: epidemic.peak_infected(),
        peak_infected_fraction: epidemic.peak_infected_fraction(),
        mean_compliance: if step_means.is_empty() {
            0.0
        } else {
            step_means.iter().sum::<f64>() / step_means.len() as f64
        },
        final_global_cost: ctl.global_cost(),
        final_mean_individual_cost: ctl.mean_individual_cost(),
        controller_gaps: ctl.gaps(),
        escrow: EscrowSummary {
            policy: escrow.policy().name(),
            deposited: tokens(t.deposited),
            refunded: tokens(t.refunded),
            forfeited: tokens(t.forfeited),
            returned: tokens(t.returned),
            pool: to_tokens(escrow.pool()),
            exclusions: t.exclusions,
        },
        ledger: LedgerSummary {
            transactions: tangle.len(),
            tips: tangle.tip_count(),
            channels: tangle.channel_addresses().count(),
        },
        bridge,
        outbox_dropped,
        hil,
        wall_clock_seconds,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ScenarioError + '_ {
    move |e| ScenarioError::Io(path.to_path_buf(), e)
}

fn write_table<I>(dir: &Path, name: &str, header: &[&str], rows: I) -> Result<PathBuf, ScenarioError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let path = dir.join(name);
    let f = File::create(&path).map_err(io_err(&path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let to_io = |e: csv::Error| ScenarioError::Io(path.clone(), std::io::Error::other(e));
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Writes the run's artifacts into `dir` and returns their paths:
///
/// * `epidemic.csv`: `step,S,I,R_slight,R_serious,mean_M,C,mean_c`
/// * `costs.csv`: `step,C,mean_c,mean_compliance`
/// * `transfers.csv`: `step,agent,kind,amount_micros`
/// * `hil.csv` (replay runs): `step,bit,fix_x,fix_y,true_x,true_y`
/// * `ledger.json`: tangle snapshot, if enabled
/// * `summary.json`
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join("epidemic.csv");
    let f = File::create(&path).map_err(io_err(&path))?;
    out.epidemic
        .write_csv(BufWriter::new(f))
        .map_err(|e| ScenarioError::Io(path.clone(), std::io::Error::other(e)))?;
    written.push(path);

    written.push(write_table(
        dir,
        "costs.csv",
        &["step", "C", "mean_c", "mean_compliance"],
        out.costs.iter().map(|c| {
            vec![c.step.to_string(), c.global_cost.to_string(), c.mean_c.to_string(), opt(c.mean_compliance)]
        }),
    )?);

    written.push(write_table(
        dir,
        "transfers.csv",
        &["step", "agent", "kind", "amount_micros"],
        out.transfers
            .iter()
            .map(|t| vec![t.step.to_string(), t.agent.to_string(), t.kind.to_string(), t.amount.to_string()]),
    )?);

    if let Some(h) = &out.hil {
        let rows = h.bits.iter().zip(&h.fixes).zip(&h.truth).enumerate().map(|(k, ((bit, fix), truth))| {
            vec![
                (k + 1).to_string(),
                opt(bit.map(u8::from)),
                opt(fix.map(|f| f[0])),
                opt(fix.map(|f| f[1])),
                truth[0].to_string(),
                truth[1].to_string(),
            ]
        });
        written.push(write_table(dir, "hil.csv", &["step", "bit", "fix_x", "fix_y", "true_x", "true_y"], rows)?);
    }

    if out.config.outputs.snapshot {
        let path = dir.join("ledger.json");
        write_snapshot(&out.ledger.read(), &path).map_err(|e| match e {
            crate::ledger::SnapshotError::Io(io) => ScenarioError::Io(path.clone(), io),
            other => ScenarioError::invariant("ledger", other),
        })?;
        written.push(path);
    }

    let path = dir.join("summary.json");
    let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut f, &out.summary)
        .map_err(|e| ScenarioError::Io(path.clone(), std::io::Error::other(e)))?;
    writeln!(f).and_then(|_| f.flush()).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}
