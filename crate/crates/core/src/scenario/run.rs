use std::time::Instant;

use rand::Rng;

use super::output::summarize;
use super::{HilInput, RunSummary, ScenarioConfig, ScenarioError};
use crate::bus::{Bus, Envelope, Gateway, RetryPolicy, Route, StatusPublisher};
use crate::controller::Controller;
use crate::epidemic::{MaskPolicy, Row, Series, World};
use crate::escrow::{to_micros, Escrow, Transfer};
use crate::ledger::{ChannelCursor, Ledger, MamChannel};
use crate::positioning::{distance, jitter_distance_sd, multilaterate, simulate_exchange, time_of_flight, Anchor};
use crate::rng::{Keyed, Tag};
use crate::sensing::Detector;
use crate::wire::{status_topic, CostRecord, StatusRecord, TransferBatch, COSTS_TOPIC, TRANSFERS_TOPIC};

/// One line of `costs.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRow {
    pub step: u64,
    pub global_cost: f64,
    pub mean_c: f64,
    /// Mean of the bits the controller read this step; `None` if it read none.
    pub mean_compliance: Option<f64>,
}

/// What the replayed agent produced, step by step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HilTrace {
    pub agent: usize,
    /// Detector output per step; `None` while the window fills.
    pub bits: Vec<Option<bool>>,
    /// Multilateration fix per step.
    pub fixes: Vec<Option<[f64; 2]>>,
    /// Simulated true position per step.
    pub truth: Vec<[f64; 2]>,
    pub samples_used: usize,
    pub replay_warnings: usize,
    pub detector_dropped: u64,
}

pub struct RunOutput {
    pub config: ScenarioConfig,
    pub epidemic: Series,
    pub costs: Vec<CostRow>,
    pub transfers: Vec<Transfer>,
    pub ledger: Ledger,
    pub controller: Controller,
    pub escrow: Escrow,
    pub hil: Option<HilTrace>,
    pub summary: RunSummary,
}

/// Runs the closed loop for `config.steps` steps.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    Loop::new(config, None)?.run()
}

/// As [`run_scenario`], with agent `config.hil.agent` driven by `input`.
/// The run stops early if the readings run out.
pub fn run_hil_replay(config: &ScenarioConfig, input: HilInput) -> Result<RunOutput, ScenarioError> {
    Loop::new(config, Some(input))?.run()
}

struct Hil {
    agent: usize,
    detector: Detector,
    samples: std::vec::IntoIter<crate::sensing::GasSample>,
    per_step: usize,
    anchors: Vec<Anchor>,
    jitter_sd: f64,
    trace: HilTrace,
}

impl Hil {
    fn next_bit(&mut self) -> Option<bool> {
        let mut bit = None;
        for s in self.samples.by_ref().take(self.per_step) {
            self.trace.samples_used += 1;
            if let Some(b) = self.detector.push_and_detect(s) {
                bit = Some(b);
            }
        }
        bit
    }

    fn locate(&self, cfg: &ScenarioConfig, keyed: &Keyed, step: u64, truth: [f64; 2]) -> Option<[f64; 2]> {
        let mut rng = keyed.stream(Tag::Ranging, &[step]);
        let mut dists = Vec::with_capacity(self.anchors.len());
        for a in &self.anchors {
            let d = (truth[0] - a.position[0]).hypot(truth[1] - a.position[1]);
            let offset = rng.random::<f64>() * cfg.anchors.max_clock_offset;
            let ranged = simulate_exchange(d, cfg.anchors.delays, offset, self.jitter_sd, &mut rng)
                .and_then(|ts| time_of_flight(&ts))
                .and_then(distance);
            match ranged {
                Ok(r) => dists.push(r),
                Err(e) => {
                    log::warn!("step {step}: ranging to anchor {} failed: {e}", a.id);
                    return None;
                }
            }
        }
        match multilaterate(&self.anchors, &dists) {
            Ok(fix) => Some(fix.position),
            Err(e) => {
                log::warn!("step {step}: no position fix: {e}");
                None
            }
        }
    }
}

struct Loop<'a> {
    cfg: &'a ScenarioConfig,
    steps: u64,
    keyed: Keyed,
    world: World,
    ctl: Controller,
    escrow: Escrow,
    ledger: Ledger,
    bus: Bus,
    gateway: Gateway<Ledger>,
    devices: Vec<StatusPublisher>,
    controller_dev: StatusPublisher,
    escrow_dev: StatusPublisher,
    cursors: Vec<ChannelCursor>,
    hil: Option<Hil>,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a ScenarioConfig, input: Option<HilInput>) -> Result<Self, ScenarioError> {
        cfg.validate().map_err(ScenarioError::Config)?;
        let n = cfg.world.n_agents;
        let world = World::new(cfg.world.clone(), cfg.seed).map_err(|e| ScenarioError::config("world", e.0))?;
        let ctl = Controller::new(cfg.controller.clone(), n).map_err(|e| ScenarioError::config("controller", e))?;
        let escrow = Escrow::uniform(cfg.escrow.policy, n, to_micros(cfg.escrow.initial_balance))
            .map_err(|e| ScenarioError::config("escrow", e))?;

        let ledger = Ledger::new(cfg.seed);
        let bus = Bus::new(cfg.bus.queue_capacity);
        let side_key = cfg.ledger.side_key.as_ref().map(|k| k.as_bytes().to_vec());
        let channel = |label: String| {
            MamChannel::from_label(cfg.ledger.mode, &label, side_key.clone())
                .map_err(|e| ScenarioError::config("ledger", e))
        };
        let mut routes = Vec::with_capacity(n + 2);
        let mut cursors = Vec::with_capacity(n);
        for i in 0..n {
            let ch = channel(format!("{}/agent/{i}", cfg.seed))?;
            cursors.push(ChannelCursor::for_channel(&ch));
            routes.push(Route::new(status_topic(i as u32), ch));
        }
        routes.push(Route::new(COSTS_TOPIC, channel(format!("{}/controller", cfg.seed))?));
        routes.push(Route::new(TRANSFERS_TOPIC, channel(format!("{}/escrow", cfg.seed))?));
        let retry = RetryPolicy {
            max_attempts: cfg.bus.retry_attempts,
            backoff: std::time::Duration::from_millis(cfg.bus.retry_backoff_ms),
        };
        let gateway = Gateway::attach(&bus, ledger.clone(), routes, cfg.bus.queue_capacity)
            .map_err(|e| ScenarioError::invariant("bus", e))?
            .with_retry(retry);
        let cap = cfg.bus.outbox_capacity;
        let devices = (0..n).map(|i| StatusPublisher::new(&bus, format!("device-{i}"), cap)).collect();

        let mut steps = cfg.steps;
        let hil = match input {
            None => None,
            Some(input) => {
                let per_step = cfg.hil.samples_per_step;
                let available = input.samples.len() as u64 / per_step as u64;
                if available == 0 {
                    return Err(ScenarioError::config(
                        "hil.samples_per_step",
                        format!("replay has {} samples, fewer than one step needs", input.samples.len()),
                    ));
                }
                if available < steps {
                    log::info!("replay covers {available} steps; stopping there instead of at {steps}");
                    steps = available;
                }
                Some(Hil {
                    agent: cfg.hil.agent,
                    detector: Detector::new(cfg.detector.clone()),
                    samples: input.samples.into_iter(),
                    per_step,
                    anchors: cfg.anchors.anchors(&cfg.world),
                    jitter_sd: cfg.anchors.range_sd / jitter_distance_sd(1.0),
                    trace: HilTrace {
                        agent: cfg.hil.agent,
                        replay_warnings: input.warnings.len(),
                        ..Default::default()
                    },
                })
            }
        };

        Ok(Loop {
            cfg,
            steps,
            keyed: Keyed::new(cfg.seed),
            world,
            ctl,
            escrow,
            ledger,
            controller_dev: StatusPublisher::new(&bus, "controller", cap),
            escrow_dev: StatusPublisher::new(&bus, "escrow", cap),
            bus,
            gateway,
            devices,
            cursors,
            hil,
        })
    }

    fn publish(dev: &mut StatusPublisher, topic: &str, payload: &[u8]) -> Result<(), ScenarioError> {
        dev.send(topic, payload).map(drop).map_err(|e| ScenarioError::invariant("bus", e))
    }

    /// Mask bits as the devices report them, and as the world should
    /// apply them.
    fn mask_bits(&mut self, step: u64) -> (Vec<Option<bool>>, Vec<bool>) {
        let truth = match self.cfg.world.masks {
            MaskPolicy::Fixed { .. } => self.world.fixed_mask_bits(),
            MaskPolicy::Controller { .. } => self.world.sample_mask_bits(&self.ctl),
        };
        let mut reported: Vec<Option<bool>> = truth.iter().copied().map(Some).collect();
        let mut physical = truth;
        if let Some(h) = &mut self.hil {
            let bit = h.next_bit();
            reported[h.agent] = bit;
            // While the detector warms up nothing is known; assume no mask.
            physical[h.agent] = bit.unwrap_or(false);
            h.trace.bits.push(bit);
            let truth = self.world.agents()[h.agent].position;
            let fix = h.locate(self.cfg, &self.keyed, step, truth);
            h.trace.truth.push(truth);
            h.trace.fixes.push(fix);
        }
        (reported, physical)
    }

    fn publish_statuses(&mut self, step: u64, reported: &[Option<bool>]) -> Result<(), ScenarioError> {
        let hil_agent = self.hil.as_ref().map(|h| h.agent);
        for (i, bit) in reported.iter().enumerate() {
            let Some(mask) = *bit else { continue };
            let position = if !self.cfg.ledger.publish_positions {
                None
            } else if Some(i) == hil_agent {
                self.hil.as_ref().and_then(|h| *h.trace.fixes.last().expect("fix recorded this step"))
            } else {
                Some(self.world.agents()[i].position)
            };
            let rec = StatusRecord { agent: i as u32, step, mask, position };
            Self::publish(&mut self.devices[i], &status_topic(i as u32), &rec.encode())?;
        }
        self.gateway.pump();
        Ok(())
    }

    /// What the controller learns from the ledger for this step.
    fn read_statuses(&mut self, step: u64) -> Result<Vec<Option<bool>>, ScenarioError> {
        let tangle = self.ledger.read();
        let mut records = vec![None; self.cursors.len()];
        for (i, cursor) in self.cursors.iter_mut().enumerate() {
            for msg in cursor.fetch_new(&tangle) {
                let rec = Envelope::decode(&msg.body)
                    .ok_or("not a gateway envelope".to_string())
                    .and_then(|env| StatusRecord::decode(&env.payload).map_err(|e| e.to_string()))
                    .map_err(|e| ScenarioError::invariant("ledger", format!("agent {i} channel index {}: {e}", msg.index)))?;
                if rec.agent as usize != i {
                    return Err(ScenarioError::invariant(
                        "bus",
                        format!("status for agent {} arrived on agent {i}'s channel", rec.agent),
                    ));
                }
                if rec.step == step {
                    records[i] = Some(rec.mask);
                } else {
                    log::warn!("agent {i}: status for step {} read at step {step}, ignored", rec.step);
                }
            }
        }
        Ok(records)
    }

    fn publish_costs(&mut self, step: u64) -> Result<(), ScenarioError> {
        if !self.cfg.ledger.publish_costs {
            return Ok(());
        }
        for rec in CostRecord::chunks(step, self.ctl.global_cost(), self.ctl.individual_costs()) {
            Self::publish(&mut self.controller_dev, COSTS_TOPIC, &rec.encode())?;
        }
        Ok(())
    }

    fn publish_transfers(&mut self, transfers: &[Transfer]) -> Result<(), ScenarioError> {
        if !self.cfg.ledger.publish_transfers {
            return Ok(());
        }
        for batch in TransferBatch::chunks(transfers) {
            Self::publish(&mut self.escrow_dev, TRANSFERS_TOPIC, &batch.encode())?;
        }
        Ok(())
    }

    fn row(&self) -> Row {
        crate::epidemic::row(&self.world, self.ctl.global_cost(), self.ctl.mean_individual_cost())
    }

    fn run(mut self) -> Result<RunOutput, ScenarioError> {
        let started = Instant::now();
        let n = self.cfg.world.n_agents;
        let mut rows = vec![self.row()];
        let mut costs = Vec::with_capacity(self.steps as usize);
        let mut transfers = Vec::new();

        for step in 1..=self.steps {
            let (reported, physical) = self.mask_bits(step);
            self.publish_statuses(step, &reported)?;
            let records = self.read_statuses(step)?;

            let stakes = self.ctl.step(&records).map_err(|e| ScenarioError::invariant("controller", e))?;
            let next: Vec<u64> = stakes.iter().map(|&s| to_micros(s)).collect();
            self.escrow.settle_all(step, &records, &next).map_err(|e| ScenarioError::invariant("escrow", e))?;
            let moved = self.escrow.drain_transfers();

            self.publish_costs(step)?;
            self.publish_transfers(&moved)?;
            self.gateway.pump();
            transfers.extend(moved);

            let present: Vec<bool> = records.iter().flatten().copied().collect();
            costs.push(CostRow {
                step,
                global_cost: self.ctl.global_cost(),
                mean_c: self.ctl.mean_individual_cost(),
                mean_compliance: (!present.is_empty())
                    .then(|| present.iter().filter(|&&b| b).count() as f64 / present.len() as f64),
            });

            let counts = self.world.step(&physical);
            if counts.total() != n {
                return Err(ScenarioError::invariant("epidemic", format!("step {step}: {} agents, expected {n}", counts.total())));
            }
            rows.push(self.row());
        }

        self.escrow.close(self.steps).map_err(|e| ScenarioError::invariant("escrow", e))?;
        let moved = self.escrow.drain_transfers();
        self.publish_transfers(&moved)?;
        self.gateway.pump();
        transfers.extend(moved);

        let report = self.ledger.read().verify();
        if !report.is_clean() {
            return Err(ScenarioError::invariant("ledger", format!("{:?}", report.violations)));
        }

        let hil = self.hil.map(|h| HilTrace { detector_dropped: h.detector.dropped(), ..h.trace });
        let epidemic = Series { n, rows };
        let outbox_dropped =
            self.devices.iter().chain([&self.controller_dev, &self.escrow_dev]).map(StatusPublisher::dropped).sum();
        let summary = summarize(
            self.cfg,
            self.steps,
            &epidemic,
            &costs,
            &transfers,
            &self.ctl,
            &self.escrow,
            &self.ledger,
            self.gateway.counters(),
            outbox_dropped,
            hil.as_ref(),
            started.elapsed().as_secs_f64(),
        );
        drop(self.bus);
        Ok(RunOutput {
            config: self.cfg.clone(),
            epidemic,
            costs,
            transfers,
            ledger: self.ledger,
            controller: self.ctl,
            escrow: self.escrow,
            hil,
            summary,
        })
    }
}
