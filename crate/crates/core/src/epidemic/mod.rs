//! Agent-based infection spread in a rectangular room.
//!
//! Each step runs movement, contact detection, infection trials and health
//! transitions, in that order. All randomness after set-up is keyed by
//! `(seed, purpose, step, agent[, other agent])`, so results do not depend
//! on iteration order.

mod contacts;
mod series;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use contacts::contact_pairs;
pub(crate) use series::row;
pub use series::{run, run_with_controller, Row, RunError, Series};

use crate::controller::{logistic, Controller};
use crate::rng::{Keyed, Tag};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid world config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Susceptible,
    Infected { since: u64 },
    ImmuneSlight,
    ImmuneSerious,
}

/// How mask bits are chosen each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskPolicy {
    /// The same `round(fraction · n)` agents wear a mask at every step.
    /// They are the highest-numbered agents, so the initially infected
    /// agents (the lowest-numbered) are unmasked.
    Fixed { fraction: f64 },
    /// `M_i ~ Bernoulli(p(q_i + C + c_i))`, with `q_i ~ N(q_mean, q_sd)`.
    Controller { q_mean: f64, q_sd: f64 },
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy::Fixed { fraction: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_agents: usize,
    pub room_width: f64,
    pub room_height: f64,
    /// Contact radius, metres.
    pub epsilon: f64,
    /// Infection probability per contact per step with no masks.
    pub p0: f64,
    /// Seconds per step.
    pub dt: f64,
    pub recovery_steps: u64,
    pub initial_infected: usize,
    /// Each agent's walking speed is uniform on `[0, max_speed]` m/s.
    pub max_speed: f64,
    /// Heading changes by a uniform angle in `[-turn_noise, turn_noise]` rad per step.
    pub turn_noise: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Age at which serious sequelae are a coin flip.
    pub sequelae_age_mid: f64,
    /// Logistic width of the sequelae curve, years.
    pub sequelae_age_scale: f64,
    pub mask_effectiveness: f64,
    pub masks: MaskPolicy,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_agents: 500,
            room_width: 20.0,
            room_height: 10.0,
            epsilon: 2.0,
            p0: 0.3,
            dt: 1.0,
            recovery_steps: 30,
            initial_infected: 1,
            max_speed: 1.0,
            turn_noise: 0.5,
            age_mean: 40.0,
            age_sd: 15.0,
            sequelae_age_mid: 65.0,
            sequelae_age_scale: 8.0,
            mask_effectiveness: 0.9,
            masks: MaskPolicy::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let nonneg = |x: f64| x >= 0.0;
        if self.n_agents == 0 {
            return fail("n_agents must be at least 1");
        }
        if !pos(self.room_width) || !pos(self.room_height) {
            return fail("room dimensions must be positive");
        }
        if !pos(self.epsilon) {
            return fail("epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return fail("p0 must be in [0, 1]");
        }
        if !pos(self.dt) {
            return fail("dt must be positive");
        }
        if self.initial_infected > self.n_agents {
            return fail("initial_infected exceeds n_agents");
        }
        if !(nonneg(self.max_speed) && self.max_speed.is_finite()) || !nonneg(self.turn_noise) {
            return fail("max_speed and turn_noise must be non-negative");
        }
        if !nonneg(self.age_sd) || !pos(self.sequelae_age_scale) {
            return fail("age_sd must be non-negative and sequelae_age_scale positive");
        }
        if !(0.0..=1.0).contains(&self.mask_effectiveness) {
            return fail("mask_effectiveness must be in [0, 1]");
        }
        match self.masks {
            MaskPolicy::Fixed { fraction } if !(0.0..=1.0).contains(&fraction) => {
                fail("mask fraction must be in [0, 1]")
            }
            MaskPolicy::Controller { q_sd, .. } if !nonneg(q_sd) => fail("q_sd must be non-negative"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub position: [f64; 2],
    pub speed: f64,
    pub heading: f64,
    pub age: f64,
    pub health: Health,
    pub q: f64,
    pub mask_effectiveness: f64,
    pub mask: bool,
}

impl Agent {
    pub fn velocity(&self) -> [f64; 2] {
        [self.speed * self.heading.cos(), self.speed * self.heading.sin()]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub susceptible: usize,
    pub infected: usize,
    pub immune_slight: usize,
    pub immune_serious: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.susceptible + self.infected + self.immune_slight + self.immune_serious
    }
}

/// `P0 (1 − m_i M_i)(1 − m_j M_j)`
pub fn infection_probability(p0: f64, m_i: f64, mask_i: bool, m_j: f64, mask_j: bool) -> f64 {
    let f = |m: f64, on: bool| if on { 1.0 - m } else { 1.0 };
    p0 * f(m_i, mask_i) * f(m_j, mask_j)
}

pub fn sequelae_probability(age: f64, mid: f64, scale: f64) -> f64 {
    logistic((age - mid) / scale)
}

/// Folds a coordinate back into `[0, len]` as if bouncing off both walls.
/// Returns whether the direction of travel ends up reversed (an odd number
/// of bounces).
fn reflect(x: &mut f64, len: f64) -> bool {
    let k = (*x / len).floor();
    let odd = k.rem_euclid(2.0) == 1.0;
    *x = if odd { (k + 1.0) * len - *x } else { *x - k * len };
    odd
}

#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    keyed: Keyed,
    agents: Vec<Agent>,
    step: u64,
    masked_cohort: usize,
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let keyed = Keyed::new(seed);
        let mut rng = keyed.stream(Tag::Placement, &[]);
        let age_dist = Normal::new(config.age_mean, config.age_sd).map_err(|e| ConfigError(e.to_string()))?;
        let (q_mean, q_sd) = match config.masks {
            MaskPolicy::Controller { q_mean, q_sd } => (q_mean, q_sd),
            MaskPolicy::Fixed { .. } => (0.0, 1.0),
        };
        let q_dist = Normal::new(q_mean, q_sd).map_err(|e| ConfigError(e.to_string()))?;
        let mut q_rng = keyed.stream(Tag::Proclivity, &[]);
        let agents = (0..config.n_agents)
            .map(|id| {
                let position = [
                    rng.random::<f64>() * config.room_width,
                    rng.random::<f64>() * config.room_height,
                ];
                let speed = rng.random::<f64>() * config.max_speed;
                let heading = rng.random::<f64>() * 2.0 * PI;
                let age = age_dist.sample(&mut rng).clamp(0.0, 100.0);
                let health =
                    if id < config.initial_infected { Health::Infected { since: 0 } } else { Health::Susceptible };
                Agent {
                    id,
                    position,
                    speed,
                    heading,
                    age,
                    health,
                    q: q_dist.sample(&mut q_rng),
                    mask_effectiveness: config.mask_effectiveness,
                    mask: false,
                }
            })
            .collect();
        let masked_cohort = match config.masks {
            MaskPolicy::Fixed { fraction } => (fraction * config.n_agents as f64).round() as usize,
            MaskPolicy::Controller { .. } => 0,
        };
        Ok(World { config, keyed, agents, step: 0, masked_cohort })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [Agent] {
        &mut self.agents
    }

    /// Completed steps.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.agents.iter().map(|a| a.position).collect()
    }

    pub fn counts(&self) -> Counts {
        let mut c = Counts::default();
        for a in &self.agents {
            match a.health {
                Health::Susceptible => c.susceptible += 1,
                Health::Infected { .. } => c.infected += 1,
                Health::ImmuneSlight => c.immune_slight += 1,
                Health::ImmuneSerious => c.immune_serious += 1,
            }
        }
        c
    }

    pub fn mean_mask(&self) -> f64 {
        self.agents.iter().filter(|a| a.mask).count() as f64 / self.agents.len() as f64
    }

    /// Mask bits for the coming step under a fixed policy.
    pub fn fixed_mask_bits(&self) -> Vec<bool> {
        let n = self.agents.len();
        (0..n).map(|i| i >= n - self.masked_cohort.min(n)).collect()
    }

    /// Mask bits for the coming step drawn from the controller's prices.
    pub fn sample_mask_bits(&self, controller: &Controller) -> Vec<bool> {
        let step = self.step + 1;
        self.agents
            .iter()
            .map(|a| self.keyed.bernoulli(controller.probability(a.id, a.q), Tag::Mask, &[step, a.id as u64]))
            .collect()
    }

    pub fn set_masks(&mut self, bits: &[bool]) {
        for (a, &b) in self.agents.iter_mut().zip(bits) {
            a.mask = b;
        }
    }

    pub fn step_movement(&mut self) {
        let step = self.step + 1;
        let (w, h, dt, noise) = (self.config.room_width, self.config.room_height, self.config.dt, self.config.turn_noise);
        for a in &mut self.agents {
            if noise > 0.0 {
                let u = self.keyed.unit(Tag::Heading, &[step, a.id as u64]);
                a.heading += noise * (2.0 * u - 1.0);
            }
            let v = a.velocity();
            let mut x = a.position[0] + dt * v[0];
            let mut y = a.position[1] + dt * v[1];
            if reflect(&mut x, w) {
                a.heading = PI - a.heading;
            }
            if reflect(&mut y, h) {
                a.heading = -a.heading;
            }
            a.heading = a.heading.rem_euclid(2.0 * PI);
            a.position = [x, y];
        }
    }

    pub fn contact_pairs(&self) -> Vec<(usize, usize)> {
        contact_pairs(&self.positions(), self.config.epsilon)
    }

    /// One Bernoulli trial for susceptible `i` meeting infected `j` at the
    /// coming step. Keyed by the unordered pair, so it is the same draw
    /// whichever way round it is asked.
    pub fn infection_trial(&self, i: usize, j: usize) -> bool {
        let (a, b) = (&self.agents[i], &self.agents[j]);
        let p = infection_probability(self.config.p0, a.mask_effectiveness, a.mask, b.mask_effectiveness, b.mask);
        let (lo, hi) = (i.min(j) as u64, i.max(j) as u64);
        self.keyed.bernoulli(p, Tag::Infection, &[self.step + 1, lo, hi])
    }

    /// Susceptible agents infected by this step's contacts.
    pub fn new_infections(&self, pairs: &[(usize, usize)]) -> Vec<usize> {
        let mut hit = vec![false; self.agents.len()];
        for &(i, j) in pairs {
            let (si, sj) = (self.agents[i].health, self.agents[j].health);
            let (s, inf) = match (si, sj) {
                (Health::Susceptible, Health::Infected { .. }) => (i, j),
                (Health::Infected { .. }, Health::Susceptible) => (j, i),
                _ => continue,
            };
            if !hit[s] && self.infection_trial(s, inf) {
                hit[s] = true;
            }
        }
        hit.iter().enumerate().filter(|(_, &h)| h).map(|(i, _)| i).collect()
    }

    fn health_transitions(&mut self, step: u64) {
        let c = &self.config;
        for a in &mut self.agents {
            if let Health::Infected { since } = a.health {
                if step >= since + c.recovery_steps {
                    let p = sequelae_probability(a.age, c.sequelae_age_mid, c.sequelae_age_scale);
                    let serious = self.keyed.bernoulli(p, Tag::Sequelae, &[a.id as u64]);
                    a.health = if serious { Health::ImmuneSerious } else { Health::ImmuneSlight };
                }
            }
        }
    }

    /// Advances one step with the given mask bits.
    pub fn step(&mut self, masks: &[bool]) -> Counts {
        self.set_masks(masks);
        self.step_movement();
        let pairs = self.contact_pairs();
        let infected = self.new_infections(&pairs);
        let step = self.step + 1;
        for i in infected {
            self.agents[i].health = Health::Infected { since: step };
        }
        self.health_transitions(step);
        self.step = step;
        self.counts()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> WorldConfig {
        WorldConfig { n_agents: n, ..Default::default() }
    }

    #[test]
    fn infection_probability_examples() {
        assert_eq!(infection_probability(0.3, 1.0, true, 0.0, false), 0.0);
        assert!((infection_probability(0.3, 0.9, true, 0.9, true) - 0.003).abs() < 1e-15);
        assert_eq!(infection_probability(0.3, 0.9, false, 0.5, false), 0.3);
    }

    #[test]
    fn perfect_mask_never_infects() {
        let cfg = WorldConfig { n_agents: 2, mask_effectiveness: 1.0, ..Default::default() };
        let mut w = World::new(cfg, 3).unwrap();
        w.set_masks(&[false, true]);
        for _ in 0..1000 {
            assert!(!w.infection_trial(1, 0));
            w.step += 1;
        }
    }

    #[test]
    fn reflect_keeps_inside_and_reports_flips() {
        let mut x = 10.5;
        assert!(reflect(&mut x, 10.0));
        assert!((x - 9.5).abs() < 1e-12);
        let mut x = -0.25;
        assert!(reflect(&mut x, 10.0));
        assert!((x - 0.25).abs() < 1e-12);
        let mut x = 4.0;
        assert!(!reflect(&mut x, 10.0));
        let mut x = 23.0;
        assert!(!reflect(&mut x, 10.0));
        assert!((x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn still_agents_stay_put() {
        let cfg = WorldConfig { max_speed: 0.0, turn_noise: 0.0, ..small(20) };
        let mut w = World::new(cfg, 1).unwrap();
        let before = w.positions();
        for _ in 0..10 {
            w.step_movement();
        }
        assert_eq!(before, w.positions());
    }

    #[test]
    fn wall_bounce_preserves_speed() {
        let cfg = WorldConfig { turn_noise: 0.0, ..small(1) };
        let mut w = World::new(cfg, 1).unwrap();
        let a = &mut w.agents_mut()[0];
        a.position = [19.8, 5.0];
        a.heading = 0.0;
        a.speed = 1.0;
        w.step_movement();
        let a = &w.agents()[0];
        assert!((a.position[0] - 19.2).abs() < 1e-12);
        let v = a.velocity();
        assert!((v[0] + 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agents_never_leave_the_room() {
        let cfg = WorldConfig { max_speed: 7.0, turn_noise: 2.0, ..small(100) };
        let mut w = World::new(cfg, 2).unwrap();
        for _ in 0..300 {
            w.step_movement();
            for a in w.agents() {
                assert!((0.0..=20.0).contains(&a.position[0]) && (0.0..=10.0).contains(&a.position[1]));
            }
        }
    }

    #[test]
    fn recovery_timer() {
        let cfg = WorldConfig { recovery_steps: 20, p0: 0.0, ..small(3) };
        let mut w = World::new(cfg, 0).unwrap();
        w.agents_mut()[1].health = Health::Infected { since: 5 };
        w.step = 5;
        let bits = vec![false; 3];
        for _ in 6..25 {
            w.step(&bits);
            assert!(matches!(w.agents()[1].health, Health::Infected { .. }));
        }
        w.step(&bits);
        assert_eq!(w.step_index(), 25);
        assert!(matches!(w.agents()[1].health, Health::ImmuneSlight | Health::ImmuneSerious));
    }

    #[test]
    fn sequelae_tails() {
        assert!(sequelae_probability(0.0, 65.0, 8.0) < 1e-3);
        assert!(sequelae_probability(200.0, 65.0, 8.0) > 1.0 - 1e-7);
    }

    #[test]
    fn fixed_fractions() {
        let none = World::new(WorldConfig { masks: MaskPolicy::Fixed { fraction: 0.0 }, ..small(10) }, 0).unwrap();
        assert!(none.fixed_mask_bits().iter().all(|b| !b));
        let all = World::new(WorldConfig { masks: MaskPolicy::Fixed { fraction: 1.0 }, ..small(10) }, 0).unwrap();
        assert!(all.fixed_mask_bits().iter().all(|&b| b));
        let some = World::new(WorldConfig { masks: MaskPolicy::Fixed { fraction: 0.25 }, ..small(10) }, 0).unwrap();
        let bits = some.fixed_mask_bits();
        assert_eq!(bits.iter().filter(|&&b| b).count(), 3);
        assert!(!bits[0]);
    }

    #[test]
    fn config_rejects_nonsense() {
        for bad in [
            WorldConfig { n_agents: 0, ..Default::default() },
            WorldConfig { epsilon: 0.0, ..Default::default() },
            WorldConfig { p0: 1.5, ..Default::default() },
            WorldConfig { mask_effectiveness: -0.1, ..Default::default() },
            WorldConfig { masks: MaskPolicy::Fixed { fraction: 2.0 }, ..Default::default() },
            WorldConfig { initial_infected: 501, ..Default::default() },
        ] {
            assert!(World::new(bad, 0).is_err());
        }
    }
}
