//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p maskbond-cli --test acceptance`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use maskbond::controller::{update_windowed_average, ControllerParams};
use maskbond::epidemic::{run, run_with_controller, MaskPolicy, WorldConfig};
use maskbond::escrow::{replay, to_micros, Escrow, Micros, Policy};
use maskbond::ledger::{mam_fetch, write_snapshot, Ledger, MamChannel, MamMode};
use maskbond::positioning::{
    corner_anchors, distance, multilaterate, simulate_exchange, time_of_flight, ExchangeDelays,
};
use maskbond::scenario::ScenarioConfig;
use maskbond::sensing::{detect_all, synth_stream, DetectorConfig, StreamParams};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mask_fraction_trend() -> Outcome {
    let start = Instant::now();
    let base = ScenarioConfig::load(&repo().join("scenarios/mask_fraction.toml")).map_err(|e| e.to_string())?;
    let fractions = [0.0, 0.25, 0.35, 0.55, 0.75];
    let seeds = 20u64;
    let peaks: Vec<f64> = thread::scope(|s| {
        let handles: Vec<_> = fractions
            .iter()
            .map(|&fraction| {
                let world = WorldConfig { masks: MaskPolicy::Fixed { fraction }, ..base.world.clone() };
                let steps = base.steps;
                s.spawn(move || {
                    (0..seeds).map(|seed| run(&world, seed, steps).unwrap().peak_infected_fraction()).sum::<f64>()
                        / seeds as f64
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let secs = start.elapsed().as_secs_f64();
    let decreasing = peaks.windows(2).all(|w| w[1] < w[0]);
    let msg = format!(
        "peaks {:?} at fractions {fractions:?}, {secs:.1} s",
        peaks.iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    ensure(decreasing && peaks[0] > 0.9 && peaks[3] < 0.3 && secs < 120.0, msg)
}

fn controller_convergence() -> Outcome {
    let world = WorldConfig { n_agents: 100, masks: MaskPolicy::Controller { q_mean: 0.0, q_sd: 1.0 }, ..Default::default() };
    let params = ControllerParams::default();
    let (mut worst_mean, mut worst_fair) = (0.0f64, 1.0f64);
    for seed in 0..10 {
        let (series, ctl) = run_with_controller(&world, &params, seed, 2000).map_err(|e| e.to_string())?;
        let tail = &series.rows[1501..];
        let mean = tail.iter().map(|r| r.mean_m).sum::<f64>() / tail.len() as f64;
        worst_mean = worst_mean.max((mean - params.q_star).abs());
        let fair = ctl.windowed_averages().iter().filter(|&&a| (a - params.q_star).abs() <= 0.10).count() as f64 / 100.0;
        worst_fair = worst_fair.min(fair);
    }
    ensure(
        worst_mean <= 0.05 && worst_fair >= 0.9,
        format!("worst |mean - Q*| {worst_mean:.4}, worst share of agents within 0.10 {worst_fair:.2}"),
    )
}

fn twr_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(0.1..100.0);
        let delays = ExchangeDelays { responder_reply: rng.random_range(1e-6..1e-2), initiator_reply: rng.random_range(1e-6..1e-2) };
        let offset = rng.random_range(-1e3..1e3);
        let ts = simulate_exchange(d, delays, offset, 0.0, &mut rng).map_err(|e| e.to_string())?;
        let got = distance(time_of_flight(&ts).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst = worst.max(((got - d) / d).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-12 && secs < 1.0, format!("max relative error {worst:.2e}, {secs:.3} s"))
}

fn multilateration_accuracy() -> Outcome {
    let anchors = corner_anchors(20.0, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.10).unwrap();
    let (mut sq, mut worst_clean) = (0.0, 0.0f64);
    for _ in 0..1000 {
        let p = [rng.random_range(0.0..20.0), rng.random_range(0.0..10.0)];
        let exact: Vec<f64> = anchors.iter().map(|a| (p[0] - a.position[0]).hypot(p[1] - a.position[1])).collect();
        let noisy: Vec<f64> = exact.iter().map(|d| d + noise.sample(&mut rng)).collect();
        let f = multilaterate(&anchors, &noisy).map_err(|e| e.to_string())?.position;
        sq += (f[0] - p[0]).powi(2) + (f[1] - p[1]).powi(2);
        let c = multilaterate(&anchors, &exact).map_err(|e| e.to_string())?.position;
        worst_clean = worst_clean.max((c[0] - p[0]).hypot(c[1] - p[1]));
    }
    let rmse = (sq / 1000.0).sqrt();
    ensure(rmse < 0.15 && worst_clean < 1e-6, format!("noisy RMSE {rmse:.4} m, noiseless max error {worst_clean:.2e} m"))
}

fn detector_thresholds() -> Outcome {
    let cfg = DetectorConfig::default();
    let params = StreamParams::default();
    let worn = detect_all(&cfg, &synth_stream(&[(true, 500)], &params, 1));
    let ambient = detect_all(&cfg, &synth_stream(&[(false, 500)], &params, 2));
    let all_worn = worn.iter().flatten().all(|&b| b) && worn.iter().flatten().count() > 0;
    let all_ambient = ambient.iter().flatten().all(|&b| !b) && ambient.iter().flatten().count() > 0;

    let seg = 40;
    let schedule: Vec<(bool, usize)> = (0..8).map(|i| (i % 2 == 0, seg)).collect();
    let bits = detect_all(&cfg, &synth_stream(&schedule, &params, 3));
    let mut worst_lag = 0;
    for (i, &(state, _)) in schedule.iter().enumerate().skip(1) {
        let edge = i * seg;
        let settle = (edge..edge + seg).find(|&k| bits[k] == Some(state)).unwrap_or(usize::MAX);
        let lag = settle.saturating_sub(edge) + 1;
        let stays = settle != usize::MAX && bits[settle..edge + seg].iter().all(|&b| b == Some(state));
        worst_lag = worst_lag.max(if stays { lag } else { usize::MAX });
    }
    ensure(
        all_worn && all_ambient && worst_lag <= 10,
        format!("worn all 1: {all_worn}, ambient all 0: {all_ambient}, worst transition lag {worst_lag} samples"),
    )
}

fn ledger_suite() -> Outcome {
    let ledger = Ledger::new(6);
    let channel = |t: usize| {
        let mode = [MamMode::Public, MamMode::Private, MamMode::Restricted][t % 3];
        let key = (mode == MamMode::Restricted).then(|| format!("side-{t}").into_bytes());
        MamChannel::from_label(mode, &format!("acceptance/{t}"), key).unwrap()
    };
    thread::scope(|s| {
        for t in 0..8 {
            let ledger = ledger.clone();
            s.spawn(move || {
                let mut ch = channel(t);
                for k in 0..1250 {
                    if k % 5 == 0 {
                        ledger.publish(&mut ch, format!("{t}/{k}").as_bytes()).unwrap();
                    } else {
                        ledger.append(format!("{t}/{k}").into_bytes(), None).unwrap();
                    }
                }
            });
        }
    });
    let tangle = ledger.read();
    let report = tangle.verify();
    let unique = tangle.transactions().map(|tx| tx.id).collect::<HashSet<_>>().len() == tangle.len();
    let mut round_trips = true;
    let mut locked_out = true;
    for t in 0..8 {
        let ch = channel(t);
        let got: Vec<Vec<u8>> = mam_fetch(&tangle, &ch.address(), ch.mode(), Some(&ch.keys())).into_iter().map(|m| m.body).collect();
        let want: Vec<Vec<u8>> = (0..1250).step_by(5).map(|k| format!("{t}/{k}").into_bytes()).collect();
        round_trips &= got == want;
        if ch.mode() == MamMode::Restricted {
            let wrong = MamChannel::from_label(MamMode::Restricted, &format!("acceptance/{t}"), Some(b"wrong".to_vec())).unwrap();
            locked_out &= mam_fetch(&tangle, &ch.address(), MamMode::Restricted, Some(&wrong.keys())).is_empty();
            locked_out &= mam_fetch(&tangle, &ch.address(), MamMode::Restricted, None).is_empty();
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let snap = dir.path().join("ledger.json");
    write_snapshot(&tangle, &snap).map_err(|e| e.to_string())?;
    drop(tangle);
    let status = Command::new(env!("CARGO_BIN_EXE_maskbond"))
        .args(["ledger", "inspect"])
        .arg(&snap)
        .output()
        .map_err(|e| e.to_string())?
        .status;

    let n = ledger.len();
    ensure(
        report.is_clean() && unique && round_trips && locked_out && status.success() && n == 10_001,
        format!(
            "{n} transactions, {} tips, violations {}, MAM round trips {round_trips}, restricted locked {locked_out}, inspect {status}",
            report.tips,
            report.violations.len()
        ),
    )
}

fn random_history(rng: &mut ChaCha8Rng, n: usize, steps: usize) -> (Vec<Vec<Option<bool>>>, Vec<Vec<Micros>>) {
    let bits = (0..steps).map(|_| (0..n).map(|_| Some(rng.random_bool(0.7))).collect()).collect();
    let stakes = (0..steps).map(|_| (0..n).map(|_| to_micros(rng.random_range(0.0..2.5))).collect()).collect();
    (bits, stakes)
}

fn settle(policy: Policy, bits: &[Vec<Option<bool>>], stakes: &[Vec<Micros>], balance: Micros) -> Result<Escrow, String> {
    let n = bits[0].len();
    let mut e = Escrow::uniform(policy, n, balance).map_err(|e| e.to_string())?;
    for (k, (b, s)) in bits.iter().zip(stakes).enumerate() {
        e.settle_all(k as u64 + 1, b, s).map_err(|e| e.to_string())?;
        if e.total() != e.initial_total() {
            return Err(format!("{} off by {} at step {}", policy.name(), e.total() as i128 - e.initial_total() as i128, k + 1));
        }
    }
    e.close(bits.len() as u64 + 1).map_err(|e| e.to_string())?;
    let (wallets, pool) = replay(&vec![balance; n], e.transfers()).ok_or("transfer log overdraws")?;
    if wallets != e.balances() || pool != e.pool() || e.total() != e.initial_total() {
        return Err(format!("{}: books do not balance after close", policy.name()));
    }
    Ok(e)
}

fn token_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (bits, stakes) = random_history(&mut rng, 50, 1000);
    let balance = to_micros(150.0);
    let mut moved = Vec::new();
    for policy in [Policy::FixedPenalty, Policy::Adaptive, Policy::AdaptiveWithReturn { rho: 0.3 }, Policy::EventDriven] {
        let e = settle(policy, &bits, &stakes, balance)?;
        moved.push(format!("{} {} transfers", policy.name(), e.transfers().len()));
    }
    let a = settle(Policy::Adaptive, &bits, &stakes, balance)?;
    let r = settle(Policy::AdaptiveWithReturn { rho: 0.0 }, &bits, &stakes, balance)?;
    let identical = a.transfers() == r.transfers() && a.balances() == r.balances() && a.pool() == r.pool();
    ensure(identical, format!("conserved exactly ({}); rho=0 identical to adaptive: {identical}", moved.join(", ")))
}

fn windowed_average_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for gamma in [0.1, 0.5, 0.9] {
        for _ in 0..2000 {
            let len = rng.random_range(0..=64);
            let bits: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
            let recursive = bits.iter().fold(0.0, |a, &m| update_windowed_average(a, m, gamma));
            let direct: f64 = (1.0 - gamma)
                * bits.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| gamma.powi((len - 1 - j) as i32)).sum::<f64>();
            worst = worst.max((recursive - direct).abs());
        }
    }
    ensure(worst < 1e-12, format!("max |recursive - direct| {worst:.2e} over 6000 sequences"))
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        let out = Command::new(env!("CARGO_BIN_EXE_maskbond"))
            .args(["simulate"])
            .arg(repo().join("scenarios/closed_loop.toml"))
            .args(["--steps", "120", "--out-dir"])
            .arg(d.path())
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("simulate failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let mut same = Vec::new();
    for f in ["epidemic.csv", "costs.csv", "transfers.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{f} differs"));
        }
        same.push(format!("{f} ({} bytes)", a.len()));
    }
    Ok(format!("byte-identical: {}", same.join(", ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("mask-fraction trend", mask_fraction_trend),
        ("controller convergence", controller_convergence),
        ("TWR exactness", twr_exactness),
        ("multilateration accuracy", multilateration_accuracy),
        ("detector thresholds", detector_thresholds),
        ("ledger invariant suite", ledger_suite),
        ("token conservation", token_conservation),
        ("windowed-average oracle", windowed_average_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {name}: {detail} [{:.2?}]", i + 1, start.elapsed());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
