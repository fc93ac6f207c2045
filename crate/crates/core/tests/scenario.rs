use std::fs;
use std::path::Path;

use maskbond::bus::Envelope;
use maskbond::epidemic::{run_with_controller, MaskPolicy};
use maskbond::escrow::{Policy, Transfer};
use maskbond::ledger::{inspect, mam_fetch, read_snapshot, MamChannel, MamMode};
use maskbond::scenario::{
    run_hil_replay, run_scenario, write_outputs, HilInput, ScenarioConfig, ScenarioError,
};
use maskbond::sensing::{detect_all, write_replay, StreamParams};
use maskbond::wire::{CostRecord, StatusRecord, TransferBatch};

fn small(seed: u64, n: usize, steps: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(seed);
    cfg.steps = steps;
    cfg.world.n_agents = n;
    cfg.world.masks = MaskPolicy::Controller { q_mean: 0.0, q_sd: 1.0 };
    cfg
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn minimal_run_writes_consistent_outputs() {
    let cfg = small(1, 1, 10);
    let out = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&out, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["epidemic.csv", "costs.csv", "transfers.csv", "ledger.json", "summary.json"]);

    let s = &out.summary;
    let epi = read_csv(&dir.path().join("epidemic.csv"));
    assert_eq!(epi.len(), 11);
    let last = &epi[10];
    assert_eq!(last[1].parse::<usize>().unwrap(), s.final_counts.susceptible);
    assert_eq!(last[2].parse::<usize>().unwrap(), s.final_counts.infected);

    let costs = read_csv(&dir.path().join("costs.csv"));
    let m: Vec<f64> = costs.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!((m.iter().sum::<f64>() / m.len() as f64 - s.mean_compliance).abs() < 1e-12);
    assert_eq!(costs[9][1].parse::<f64>().unwrap(), s.final_global_cost);

    let transfers = read_csv(&dir.path().join("transfers.csv"));
    let sum = |kind: &str| -> u64 { transfers.iter().filter(|r| r[2] == kind).map(|r| r[3].parse::<u64>().unwrap()).sum() };
    assert_eq!(sum("deposit") as f64 / 1e6, s.escrow.deposited);
    assert_eq!(sum("forfeit") as f64 / 1e6, s.escrow.forfeited);
    assert_eq!(sum("deposit"), sum("refund") + sum("forfeit"), "every bond is released at the end");

    let snap = read_snapshot(&dir.path().join("ledger.json")).unwrap();
    let report = inspect(&snap);
    assert!(report.violations.is_empty());
    assert_eq!(report.transactions, s.ledger.transactions);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["steps"], 10);
    assert_eq!(json["bridge"]["published"].as_u64().unwrap() + 1, s.ledger.transactions as u64);
}

#[test]
fn identical_seed_gives_identical_bytes() {
    let cfg = small(5, 40, 30);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_scenario(&cfg).unwrap(), d.path()).unwrap();
    }
    for f in ["epidemic.csv", "costs.csv", "transfers.csv", "ledger.json"] {
        assert_eq!(fs::read(dirs[0].path().join(f)).unwrap(), fs::read(dirs[1].path().join(f)).unwrap(), "{f}");
    }
    let other = run_scenario(&small(6, 40, 30)).unwrap();
    let first = run_scenario(&cfg).unwrap();
    assert_ne!(other.epidemic.rows, first.epidemic.rows);
}

#[test]
fn ledger_loop_matches_in_memory_loop() {
    let cfg = small(11, 60, 80);
    let out = run_scenario(&cfg).unwrap();
    let (series, ctl) = run_with_controller(&cfg.world, &cfg.controller, cfg.seed, cfg.steps).unwrap();
    assert_eq!(out.epidemic.rows, series.rows);
    assert_eq!(out.controller.individual_costs(), ctl.individual_costs());
    assert_eq!(out.summary.controller_gaps, 0);
}

fn channel_bodies(out: &maskbond::scenario::RunOutput, label: &str) -> Vec<Vec<u8>> {
    let ch = MamChannel::from_label(MamMode::Private, &format!("{}/{label}", out.config.seed), None).unwrap();
    mam_fetch(&out.ledger.read(), &ch.address(), MamMode::Private, Some(&ch.keys()))
        .into_iter()
        .map(|m| Envelope::decode(&m.body).unwrap().payload)
        .collect()
}

#[test]
fn bridge_accounts_for_every_message() {
    let cfg = small(2, 30, 20);
    let out = run_scenario(&cfg).unwrap();
    let b = out.summary.bridge;
    assert_eq!(b.published, b.received - b.unrouted - b.duplicates - b.dead_lettered);
    assert_eq!((b.unrouted, b.duplicates, b.dead_lettered, b.bus_dropped), (0, 0, 0, 0));
    assert!(out.summary.ledger.tips > 1);

    let transfer_msgs = channel_bodies(&out, "escrow");
    let on_ledger: Vec<Transfer> = transfer_msgs.iter().flat_map(|p| TransferBatch::decode(p).unwrap().0).collect();
    assert_eq!(on_ledger, out.transfers);

    let cost_msgs = channel_bodies(&out, "controller");
    assert_eq!(cost_msgs.len(), 20);
    for (rec, row) in cost_msgs.iter().map(|p| CostRecord::decode(p).unwrap()).zip(&out.costs) {
        assert_eq!((rec.step, rec.global_cost), (row.step, row.global_cost));
        assert_eq!(rec.costs.len(), 30);
    }
    assert_eq!(b.published as usize, 30 * 20 + cost_msgs.len() + transfer_msgs.len());
}

fn hil_config(policy: Policy) -> ScenarioConfig {
    let mut cfg = small(3, 20, 200);
    cfg.escrow.policy = policy;
    cfg.controller.initial_global_cost = 1.0;
    cfg
}

fn hil_agent_tokens(policy: Policy, worn: bool) -> maskbond::scenario::HilSummary {
    let cfg = hil_config(policy);
    let input = HilInput::synthetic(&[(worn, 80)], &StreamParams::default(), 9);
    let out = run_hil_replay(&cfg, input).unwrap();
    assert_eq!(out.summary.steps, 80);
    out.summary.hil.unwrap()
}

#[test]
fn mask_worn_throughout_returns_fixed_bond() {
    let h = hil_agent_tokens(Policy::FixedPenalty, true);
    assert_eq!(h.reported_steps, 71);
    assert_eq!(h.masked_steps, 71);
    assert!(h.deposited > 0.0);
    assert_eq!(h.refunded, h.deposited);
    assert_eq!(h.forfeited, 0.0);
    assert_eq!(h.final_balance, 100.0);
}

#[test]
fn mask_never_worn_forfeits_under_every_policy() {
    for policy in [Policy::FixedPenalty, Policy::Adaptive, Policy::AdaptiveWithReturn { rho: 0.5 }, Policy::EventDriven] {
        let h = hil_agent_tokens(policy, false);
        assert_eq!(h.masked_steps, 0);
        assert!(h.forfeited > 0.0, "{policy:?}");
        assert!(h.final_balance < 100.0, "{policy:?}");
    }
}

#[test]
fn replayed_file_matches_detector_and_reaches_ledger() {
    let cfg = hil_config(Policy::Adaptive);
    let params = StreamParams::default();
    let input = HilInput::synthetic(&[(true, 40), (false, 40), (true, 40)], &params, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("replay.csv");
    write_replay(fs::File::create(&path).unwrap(), &input.samples).unwrap();
    let from_file = HilInput::from_csv(&path).unwrap();
    assert_eq!(from_file, input);

    let out = run_hil_replay(&cfg, from_file).unwrap();
    let trace = out.hil.as_ref().unwrap();
    assert_eq!(trace.bits, detect_all(&cfg.detector, &input.samples));

    // Every emitted bit is one status record on the agent's channel, in order.
    let recs: Vec<StatusRecord> =
        channel_bodies(&out, "agent/0").iter().map(|p| StatusRecord::decode(p).unwrap()).collect();
    let emitted: Vec<(u64, bool)> =
        trace.bits.iter().enumerate().filter_map(|(k, b)| b.map(|b| (k as u64 + 1, b))).collect();
    assert_eq!(recs.iter().map(|r| (r.step, r.mask)).collect::<Vec<_>>(), emitted);
    assert!(recs.iter().all(|r| r.agent == 0 && r.position.is_some()));

    let rmse = out.summary.hil.unwrap().position_rmse.unwrap();
    assert!(rmse < 0.25, "rmse {rmse}");
}

#[test]
fn errors_map_to_exit_codes() {
    let mut cfg = small(1, 5, 5);
    cfg.steps = 0;
    let e = run_scenario(&cfg).err().unwrap();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("steps"));

    let e = HilInput::from_csv(Path::new("/nonexistent/replay.csv")).unwrap_err();
    assert!(matches!(e, ScenarioError::Io(..)));
    assert_eq!(e.exit_code(), 4);

    let short = HilInput::synthetic(&[(true, 3)], &StreamParams::default(), 1);
    let mut cfg = small(1, 5, 5);
    cfg.hil.samples_per_step = 4;
    assert_eq!(run_hil_replay(&cfg, short).err().unwrap().exit_code(), 2);
}
