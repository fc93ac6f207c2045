//! Personalised feedback pricing.
//!
//! A global cost `C` and one individual cost `c_i` per agent are integral
//! controllers on compliance:
//!
//! ```text
//! C(k+1)   = C(k)   + α (Q* − mean_i M_i(k−m))
//! c_i(k+1) = c_i(k) + β (Q* − M̄_i(k−m))
//! M̄_i(k)   = γ M̄_i(k−1) + (1−γ) M_i(k)
//! P(M_i = 1) = p(q_i + C + c_i)
//! ```
//!
//! The stake an agent posts is `max(0, C + c_i)`; the unclamped sum still
//! drives the probability.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("invalid controller parameter: {0}")]
    Params(String),
    #[error("mean compliance {0} is outside [0, 1]")]
    MeanOutOfRange(f64),
    #[error("agent {agent} is not registered ({n} agents)")]
    UnknownAgent { agent: usize, n: usize },
    #[error("expected {expected} compliance records, got {got}")]
    RecordCount { expected: usize, got: usize },
}

/// Monotone map from cost-adjusted proclivity to a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Link {
    /// `1 / (1 + e^{-x})`
    #[default]
    Logistic,
    /// `1 / (1 + e^{-(x - shift) / scale})`, `scale > 0`.
    ScaledLogistic { scale: f64, shift: f64 },
}

impl Link {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Link::Logistic => logistic(x),
            Link::ScaledLogistic { scale, shift } => logistic((x - shift) / scale),
        }
    }

    fn validate(&self) -> Result<(), ControllerError> {
        match *self {
            Link::ScaledLogistic { scale, shift } if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) => {
                Err(ControllerError::Params(format!("link scale must be positive and finite, got {scale}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q_star: f64,
    pub delay_m: usize,
    pub link: Link,
    /// `C(0)`. Zero unless a scenario wants bonds to start nonzero.
    pub initial_global_cost: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            alpha: 0.05,
            beta: 0.03,
            gamma: 0.99,
            q_star: 0.9,
            delay_m: 1,
            link: Link::Logistic,
            initial_global_cost: 0.0,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: String| Err(ControllerError::Params(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.q_star) {
            return bad(format!("q_star must be in [0, 1], got {}", self.q_star));
        }
        if !self.initial_global_cost.is_finite() {
            return bad("initial_global_cost must be finite".into());
        }
        self.link.validate()
    }
}

pub fn update_global(c: f64, alpha: f64, q_star: f64, mean: f64) -> Result<f64, ControllerError> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(ControllerError::MeanOutOfRange(mean));
    }
    Ok(c + alpha * (q_star - mean))
}

pub fn update_individual(c_i: f64, beta: f64, q_star: f64, avg: f64) -> f64 {
    c_i + beta * (q_star - avg)
}

pub fn update_windowed_average(prev: f64, m: bool, gamma: f64) -> f64 {
    gamma * prev + (1.0 - gamma) * f64::from(u8::from(m))
}

pub fn compliance_probability(q: f64, c: f64, c_i: f64, link: &Link) -> f64 {
    link.eval(q + c + c_i)
}

pub fn stake_amount(c: f64, c_i: f64) -> f64 {
    (c + c_i).max(0.0)
}

/// Controller state for a fixed population `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    params: ControllerParams,
    global: f64,
    individual: Vec<f64>,
    avg: Vec<f64>,
    // Oldest first; at most delay_m + 1 entries.
    mean_history: VecDeque<f64>,
    avg_history: VecDeque<Vec<f64>>,
    last_mean: f64,
    step: u64,
    gaps: u64,
}

impl Controller {
    pub fn new(params: ControllerParams, n: usize) -> Result<Self, ControllerError> {
        params.validate()?;
        Ok(Controller {
            global: params.initial_global_cost,
            params,
            individual: vec![0.0; n],
            avg: vec![0.0; n],
            mean_history: VecDeque::new(),
            avg_history: VecDeque::new(),
            last_mean: 0.0,
            step: 0,
            gaps: 0,
        })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.individual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individual.is_empty()
    }

    pub fn global_cost(&self) -> f64 {
        self.global
    }

    pub fn individual_costs(&self) -> &[f64] {
        &self.individual
    }

    pub fn individual_cost(&self, agent: usize) -> Result<f64, ControllerError> {
        self.individual.get(agent).copied().ok_or(ControllerError::UnknownAgent { agent, n: self.len() })
    }

    pub fn windowed_averages(&self) -> &[f64] {
        &self.avg
    }

    pub fn mean_individual_cost(&self) -> f64 {
        if self.individual.is_empty() {
            0.0
        } else {
            self.individual.iter().sum::<f64>() / self.individual.len() as f64
        }
    }

    /// Steps processed so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Agent-steps with no compliance record.
    pub fn gaps(&self) -> u64 {
        self.gaps
    }

    pub fn probability(&self, agent: usize, q: f64) -> f64 {
        compliance_probability(q, self.global, self.individual[agent], &self.params.link)
    }

    pub fn stake(&self, agent: usize) -> f64 {
        stake_amount(self.global, self.individual[agent])
    }

    pub fn stakes(&self) -> Vec<f64> {
        self.individual.iter().map(|&c| stake_amount(self.global, c)).collect()
    }

    /// Applies one agent's individual law with an explicit windowed average.
    pub fn update_individual(&mut self, agent: usize, avg: f64) -> Result<f64, ControllerError> {
        let n = self.len();
        let c = self.individual.get_mut(agent).ok_or(ControllerError::UnknownAgent { agent, n })?;
        *c = update_individual(*c, self.params.beta, self.params.q_star, avg);
        Ok(*c)
    }

    /// Applies both cost laws to already-delayed measurements.
    pub fn update_costs(&mut self, mean: f64, avgs: &[f64]) -> Result<(), ControllerError> {
        if avgs.len() != self.len() {
            return Err(ControllerError::RecordCount { expected: self.len(), got: avgs.len() });
        }
        let p = &self.params;
        self.global = update_global(self.global, p.alpha, p.q_star, mean)?;
        for (c, &a) in self.individual.iter_mut().zip(avgs) {
            *c = update_individual(*c, p.beta, p.q_star, a);
        }
        Ok(())
    }

    /// One closed-loop step from the compliance records of step `k`.
    ///
    /// `None` marks a missing record: that agent's average holds, the gap is
    /// counted, and the mean is taken over the agents that did report (or
    /// held from the previous step if nobody did). Returns stakes for `k+1`.
    pub fn step(&mut self, records: &[Option<bool>]) -> Result<Vec<f64>, ControllerError> {
        if records.len() != self.len() {
            return Err(ControllerError::RecordCount { expected: self.len(), got: records.len() });
        }
        let gamma = self.params.gamma;
        let (mut sum, mut present) = (0u64, 0u64);
        for (avg, rec) in self.avg.iter_mut().zip(records) {
            match rec {
                Some(m) => {
                    *avg = update_windowed_average(*avg, *m, gamma);
                    sum += u64::from(*m);
                    present += 1;
                }
                None => self.gaps += 1,
            }
        }
        let missing = self.len() as u64 - present;
        if missing > 0 {
            log::debug!("controller step {}: {missing} missing compliance records", self.step);
        }
        let mean = if present > 0 { sum as f64 / present as f64 } else { self.last_mean };
        self.last_mean = mean;

        let keep = self.params.delay_m + 1;
        self.mean_history.push_back(mean);
        self.avg_history.push_back(self.avg.clone());
        while self.mean_history.len() > keep {
            self.mean_history.pop_front();
            self.avg_history.pop_front();
        }
        // Before m steps have elapsed the front is the oldest value seen,
        // which is exactly the hold rule.
        let delayed_mean = self.mean_history[0];
        let delayed_avg = std::mem::take(&mut self.avg_history[0]);
        let result = self.update_costs(delayed_mean, &delayed_avg);
        self.avg_history[0] = delayed_avg;
        result?;
        self.step += 1;
        Ok(self.stakes())
    }
}
