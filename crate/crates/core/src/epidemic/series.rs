use std::io::Write;

use super::{ConfigError, MaskPolicy, World, WorldConfig};
use crate::controller::{Controller, ControllerError, ControllerParams};

/// One line of the epidemic CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub step: u64,
    pub susceptible: usize,
    pub infected: usize,
    pub immune_slight: usize,
    pub immune_serious: usize,
    pub mean_m: f64,
    pub global_cost: f64,
    pub mean_c: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub n: usize,
    pub rows: Vec<Row>,
}

impl Series {
    pub fn peak_infected(&self) -> usize {
        self.rows.iter().map(|r| r.infected).max().unwrap_or(0)
    }

    pub fn peak_infected_fraction(&self) -> f64 {
        self.peak_infected() as f64 / self.n as f64
    }

    pub fn ever_infected(&self) -> usize {
        self.rows.last().map_or(0, |r| r.infected + r.immune_slight + r.immune_serious)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "S", "I", "R_slight", "R_serious", "mean_M", "C", "mean_c"])?;
        for r in &self.rows {
            out.write_record(&[
                r.step.to_string(),
                r.susceptible.to_string(),
                r.infected.to_string(),
                r.immune_slight.to_string(),
                r.immune_serious.to_string(),
                format!("{}", r.mean_m),
                format!("{}", r.global_cost),
                format!("{}", r.mean_c),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn row(world: &World, c: f64, mean_c: f64) -> Row {
    let k = world.counts();
    Row {
        step: world.step_index(),
        susceptible: k.susceptible,
        infected: k.infected,
        immune_slight: k.immune_slight,
        immune_serious: k.immune_serious,
        mean_m: world.mean_mask(),
        global_cost: c,
        mean_c,
    }
}

/// Runs a fixed-mask world for `steps` steps. Row 0 is the initial state.
pub fn run(config: &WorldConfig, seed: u64, steps: u64) -> Result<Series, ConfigError> {
    if matches!(config.masks, MaskPolicy::Controller { .. }) {
        return Err(ConfigError("run() takes a fixed mask policy; use run_with_controller".into()));
    }
    let mut world = World::new(config.clone(), seed)?;
    let bits = world.fixed_mask_bits();
    let mut rows = vec![row(&world, 0.0, 0.0)];
    for _ in 0..steps {
        world.step(&bits);
        rows.push(row(&world, 0.0, 0.0));
    }
    Ok(Series { n: config.n_agents, rows })
}

/// Runs a world whose masks follow the pricing controller, closing the loop
/// in memory (no ledger).
pub fn run_with_controller(
    config: &WorldConfig,
    params: &ControllerParams,
    seed: u64,
    steps: u64,
) -> Result<(Series, Controller), RunError> {
    let mut world = World::new(config.clone(), seed)?;
    let mut ctl = Controller::new(params.clone(), config.n_agents)?;
    let mut rows = vec![row(&world, ctl.global_cost(), ctl.mean_individual_cost())];
    for _ in 0..steps {
        let bits = world.sample_mask_bits(&ctl);
        world.step(&bits);
        let records: Vec<Option<bool>> = bits.iter().map(|&b| Some(b)).collect();
        ctl.step(&records)?;
        rows.push(row(&world, ctl.global_cost(), ctl.mean_individual_cost()));
    }
    Ok((Series { n: config.n_agents, rows }, ctl))
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}
