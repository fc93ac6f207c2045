//! Token wallets and bonds.
//!
//! Amounts are integer micro-tokens (`1e-6` token). Controller stakes are
//! real-valued and are rounded half-to-even when they become deposits, so
//! every ledger of balances is exact.

use std::fmt;

use serde::{Deserialize, Serialize};

pub type Micros = u64;

pub const MICROS_PER_TOKEN: u64 = 1_000_000;

/// Tokens to micro-tokens, half-to-even. Negative and NaN inputs give 0.
pub fn to_micros(tokens: f64) -> Micros {
    let scaled = (tokens * MICROS_PER_TOKEN as f64).round_ties_even();
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else if scaled >= u64::MAX as f64 {
        u64::MAX
    } else {
        scaled as u64
    }
}

pub fn to_tokens(m: Micros) -> f64 {
    m as f64 / MICROS_PER_TOKEN as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    /// One bond for the whole stay; all-or-nothing refund on exit.
    FixedPenalty,
    /// Bond reissued each step; a violation loses that step's bond.
    Adaptive,
    /// As `Adaptive`, and each compliant step returns `rho` of what the
    /// agent has lost so far.
    AdaptiveWithReturn { rho: f64 },
    /// Bond persists while compliant; a violation forfeits it and the agent
    /// must post the current price again.
    EventDriven,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::FixedPenalty => "fixed_penalty",
            Policy::Adaptive => "adaptive",
            Policy::AdaptiveWithReturn { .. } => "adaptive_with_return",
            Policy::EventDriven => "event_driven",
        }
    }

    pub fn validate(&self) -> Result<(), EscrowError> {
        match *self {
            Policy::AdaptiveWithReturn { rho } if !(0.0..=1.0).contains(&rho) => Err(EscrowError::Rho(rho)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondState {
    Active,
    Refunded,
    Forfeited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub agent: usize,
    pub amount: Micros,
    pub state: BondState,
    /// Lost and not yet returned; drives partial returns.
    pub forfeited_total: Micros,
    /// Any violation observed while this stay's bond was held.
    pub violated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Deposit,
    Refund,
    Forfeit,
    PartialReturn,
}

impl TransferKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransferKind::Deposit => "deposit",
            TransferKind::Refund => "refund",
            TransferKind::Forfeit => "forfeit",
            TransferKind::PartialReturn => "partial_return",
        }
    }

    fn code(self) -> u8 {
        match self {
            TransferKind::Deposit => 0,
            TransferKind::Refund => 1,
            TransferKind::Forfeit => 2,
            TransferKind::PartialReturn => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => TransferKind::Deposit,
            1 => TransferKind::Refund,
            2 => TransferKind::Forfeit,
            3 => TransferKind::PartialReturn,
            _ => return None,
        })
    }
}

impl fmt::Display for TransferKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One leg of token movement.
///
/// * `Deposit`: wallet to bond
/// * `Refund`: bond to wallet
/// * `Forfeit`: bond to pool
/// * `PartialReturn`: pool to wallet
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub step: u64,
    pub agent: usize,
    pub kind: TransferKind,
    pub amount: Micros,
}

pub const TRANSFER_RECORD_LEN: usize = 21;

impl Transfer {
    /// Fixed-width wire form: step u64, agent u32, kind u8, amount u64, big-endian.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.step.to_be_bytes());
        out.extend_from_slice(&(self.agent as u32).to_be_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.amount.to_be_bytes());
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != TRANSFER_RECORD_LEN {
            return None;
        }
        Some(Transfer {
            step: u64::from_be_bytes(b[..8].try_into().ok()?),
            agent: u32::from_be_bytes(b[8..12].try_into().ok()?) as usize,
            kind: TransferKind::from_code(b[12])?,
            amount: u64::from_be_bytes(b[13..].try_into().ok()?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub step: u64,
    pub agent: usize,
    pub required: Micros,
    pub balance: Micros,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EscrowError {
    #[error("return fraction {0} is outside [0, 1]")]
    Rho(f64),
    #[error("agent {0} is not registered")]
    UnknownAgent(usize),
    #[error("agent {agent} has no active bond")]
    NotActive { agent: usize },
    #[error("agent {agent} already holds an active bond")]
    AlreadyActive { agent: usize },
    #[error("{op} does not apply under the {policy} policy")]
    WrongPolicy { op: &'static str, policy: &'static str },
    #[error("token conservation broken: expected {expected} micro-tokens, found {found}")]
    Conservation { expected: u128, found: u128 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepositOutcome {
    Deposited,
    Excluded,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EscrowTotals {
    pub deposited: u128,
    pub refunded: u128,
    pub forfeited: u128,
    pub returned: u128,
    pub exclusions: u64,
}

/// Wallets, bonds and the forfeited pool for agents `0..n` under one policy.
#[derive(Debug, Clone)]
pub struct Escrow {
    policy: Policy,
    wallets: Vec<Micros>,
    bonds: Vec<Option<Bond>>,
    pool: Micros,
    initial_total: u128,
    log: Vec<Transfer>,
    exclusions: Vec<Exclusion>,
    totals: EscrowTotals,
}

impl Escrow {
    pub fn new(policy: Policy, balances: Vec<Micros>) -> Result<Self, EscrowError> {
        policy.validate()?;
        let initial_total = balances.iter().map(|&b| u128::from(b)).sum();
        let n = balances.len();
        Ok(Escrow {
            policy,
            wallets: balances,
            bonds: vec![None; n],
            pool: 0,
            initial_total,
            log: Vec::new(),
            exclusions: Vec::new(),
            totals: EscrowTotals::default(),
        })
    }

    pub fn uniform(policy: Policy, n: usize, balance: Micros) -> Result<Self, EscrowError> {
        Self::new(policy, vec![balance; n])
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.wallets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wallets.is_empty()
    }

    pub fn balance(&self, agent: usize) -> Micros {
        self.wallets[agent]
    }

    pub fn balances(&self) -> &[Micros] {
        &self.wallets
    }

    pub fn bond(&self, agent: usize) -> Option<&Bond> {
        self.bonds.get(agent).and_then(Option::as_ref)
    }

    pub fn has_active_bond(&self, agent: usize) -> bool {
        self.bond(agent).is_some_and(|b| b.state == BondState::Active)
    }

    pub fn pool(&self) -> Micros {
        self.pool
    }

    pub fn initial_total(&self) -> u128 {
        self.initial_total
    }

    pub fn escrowed(&self) -> u128 {
        self.bonds
            .iter()
            .flatten()
            .filter(|b| b.state == BondState::Active)
            .map(|b| u128::from(b.amount))
            .sum()
    }

    pub fn total(&self) -> u128 {
        self.wallets.iter().map(|&w| u128::from(w)).sum::<u128>() + self.escrowed() + u128::from(self.pool)
    }

    pub fn check_conservation(&self) -> Result<(), EscrowError> {
        let found = self.total();
        if found == self.initial_total {
            Ok(())
        } else {
            Err(EscrowError::Conservation { expected: self.initial_total, found })
        }
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.log
    }

    /// Removes and returns the transfers logged since the last drain.
    pub fn drain_transfers(&mut self) -> Vec<Transfer> {
        std::mem::take(&mut self.log)
    }

    pub fn exclusions(&self) -> &[Exclusion] {
        &self.exclusions
    }

    pub fn totals(&self) -> &EscrowTotals {
        &self.totals
    }

    fn check_agent(&self, agent: usize) -> Result<(), EscrowError> {
        if agent < self.wallets.len() {
            Ok(())
        } else {
            Err(EscrowError::UnknownAgent(agent))
        }
    }

    fn record(&mut self, step: u64, agent: usize, kind: TransferKind, amount: Micros) {
        let t = &mut self.totals;
        match kind {
            TransferKind::Deposit => t.deposited += u128::from(amount),
            TransferKind::Refund => t.refunded += u128::from(amount),
            TransferKind::Forfeit => t.forfeited += u128::from(amount),
            TransferKind::PartialReturn => t.returned += u128::from(amount),
        }
        self.log.push(Transfer { step, agent, kind, amount });
    }

    fn exclude(&mut self, step: u64, agent: usize, required: Micros) {
        let balance = self.wallets[agent];
        log::debug!("step {step}: agent {agent} excluded, needs {required} has {balance}");
        self.totals.exclusions += 1;
        self.exclusions.push(Exclusion { step, agent, required, balance });
    }

    fn active_mut(&mut self, agent: usize) -> Result<&mut Bond, EscrowError> {
        self.check_agent(agent)?;
        match self.bonds[agent].as_mut() {
            Some(b) if b.state == BondState::Active => Ok(b),
            _ => Err(EscrowError::NotActive { agent }),
        }
    }

    fn require(&self, op: &'static str, ok: bool) -> Result<(), EscrowError> {
        if ok {
            Ok(())
        } else {
            Err(EscrowError::WrongPolicy { op, policy: self.policy.name() })
        }
    }

    /// Posts a bond. An agent who cannot cover it is excluded for this step
    /// and nothing changes.
    pub fn deposit(&mut self, step: u64, agent: usize, amount: Micros) -> Result<DepositOutcome, EscrowError> {
        self.check_agent(agent)?;
        if self.has_active_bond(agent) {
            return Err(EscrowError::AlreadyActive { agent });
        }
        if self.wallets[agent] < amount {
            self.exclude(step, agent, amount);
            return Ok(DepositOutcome::Excluded);
        }
        self.wallets[agent] -= amount;
        let forfeited_total = self.bonds[agent].as_ref().map_or(0, |b| b.forfeited_total);
        self.bonds[agent] = Some(Bond { agent, amount, state: BondState::Active, forfeited_total, violated: false });
        self.record(step, agent, TransferKind::Deposit, amount);
        Ok(DepositOutcome::Deposited)
    }

    /// Per-step settlement under the two adaptive policies.
    ///
    /// Compliance refunds the bond; a violation forfeits it. Either way the
    /// agent then re-stakes `next`. The refund and re-stake are netted in
    /// one move but both legs are logged.
    pub fn settle_step(&mut self, step: u64, agent: usize, m: bool, next: Micros) -> Result<DepositOutcome, EscrowError> {
        let rho = match self.policy {
            Policy::Adaptive => None,
            Policy::AdaptiveWithReturn { rho } => Some(rho),
            _ => return Err(EscrowError::WrongPolicy { op: "settle_step", policy: self.policy.name() }),
        };
        let bond = self.active_mut(agent)?;
        let amount = bond.amount;
        let mut returned = 0;
        if m {
            bond.state = BondState::Refunded;
            if let Some(rho) = rho {
                returned = to_micros(rho * to_tokens(bond.forfeited_total)).min(bond.forfeited_total);
                bond.forfeited_total -= returned;
            }
        } else {
            bond.state = BondState::Forfeited;
            bond.violated = true;
            bond.forfeited_total += amount;
        }

        let available = self.wallets[agent] + if m { amount } else { 0 } + returned;
        if m {
            self.record(step, agent, TransferKind::Refund, amount);
        } else {
            self.pool += amount;
            self.record(step, agent, TransferKind::Forfeit, amount);
        }
        if returned > 0 {
            self.pool -= returned;
            self.record(step, agent, TransferKind::PartialReturn, returned);
        }
        if available < next {
            self.wallets[agent] = available;
            self.exclude(step, agent, next);
            return Ok(DepositOutcome::Excluded);
        }
        self.wallets[agent] = available - next;
        let bond = self.bonds[agent].as_mut().expect("bond checked above");
        bond.amount = next;
        bond.state = BondState::Active;
        self.record(step, agent, TransferKind::Deposit, next);
        Ok(DepositOutcome::Deposited)
    }

    /// Notes one step of behaviour under a fixed penalty; settlement waits
    /// for exit.
    pub fn observe(&mut self, agent: usize, m: bool) -> Result<(), EscrowError> {
        self.require("observe", self.policy == Policy::FixedPenalty)?;
        let bond = self.active_mut(agent)?;
        bond.violated |= !m;
        Ok(())
    }

    /// Exit under a fixed penalty: full refund if compliant throughout,
    /// nothing otherwise.
    pub fn settle_exit(&mut self, step: u64, agent: usize, compliant_throughout: bool) -> Result<Micros, EscrowError> {
        self.require("settle_exit", self.policy == Policy::FixedPenalty)?;
        let bond = self.active_mut(agent)?;
        let amount = bond.amount;
        if compliant_throughout {
            bond.state = BondState::Refunded;
            self.wallets[agent] += amount;
            self.record(step, agent, TransferKind::Refund, amount);
            Ok(amount)
        } else {
            bond.state = BondState::Forfeited;
            bond.violated = true;
            bond.forfeited_total += amount;
            self.pool += amount;
            self.record(step, agent, TransferKind::Forfeit, amount);
            Ok(0)
        }
    }

    /// Exit using the violations seen through [`Escrow::observe`].
    pub fn exit(&mut self, step: u64, agent: usize) -> Result<Micros, EscrowError> {
        let compliant = !self.active_mut(agent)?.violated;
        self.settle_exit(step, agent, compliant)
    }

    /// Event-driven settlement: compliance leaves the bond alone; a
    /// violation forfeits it and requires a fresh deposit of `required`.
    pub fn settle_event(&mut self, step: u64, agent: usize, m: bool, required: Micros) -> Result<DepositOutcome, EscrowError> {
        self.require("settle_event", self.policy == Policy::EventDriven)?;
        let bond = self.active_mut(agent)?;
        if m {
            return Ok(DepositOutcome::Deposited);
        }
        let amount = bond.amount;
        bond.state = BondState::Forfeited;
        bond.violated = true;
        bond.forfeited_total += amount;
        self.pool += amount;
        self.record(step, agent, TransferKind::Forfeit, amount);
        self.deposit(step, agent, required)
    }

    /// Settles one step for everybody under the configured policy. Agents
    /// without an active bond (new or previously excluded) try to post
    /// `next[i]`; their behaviour this step is not priced. Agents with no
    /// record (`None`) are left untouched.
    pub fn settle_all(&mut self, step: u64, bits: &[Option<bool>], next: &[Micros]) -> Result<(), EscrowError> {
        for (agent, (&bit, &stake)) in bits.iter().zip(next).enumerate() {
            let Some(m) = bit else { continue };
            if !self.has_active_bond(agent) {
                if self.policy != Policy::FixedPenalty || self.bond(agent).is_none() {
                    self.deposit(step, agent, stake)?;
                }
                continue;
            }
            match self.policy {
                Policy::FixedPenalty => self.observe(agent, m)?,
                Policy::Adaptive | Policy::AdaptiveWithReturn { .. } => {
                    self.settle_step(step, agent, m, stake)?;
                }
                Policy::EventDriven => {
                    self.settle_event(step, agent, m, stake)?;
                }
            }
        }
        self.check_conservation()
    }

    /// Releases every active bond at the end of a run: fixed-penalty bonds
    /// are settled on their record, others are refunded.
    pub fn close(&mut self, step: u64) -> Result<(), EscrowError> {
        for agent in 0..self.len() {
            if !self.has_active_bond(agent) {
                continue;
            }
            if self.policy == Policy::FixedPenalty {
                self.exit(step, agent)?;
            } else {
                let bond = self.active_mut(agent)?;
                let amount = bond.amount;
                bond.state = BondState::Refunded;
                self.wallets[agent] += amount;
                self.record(step, agent, TransferKind::Refund, amount);
            }
        }
        self.check_conservation()
    }
}

/// Rebuilds wallets and pool from initial balances and a transfer log.
/// Returns `None` if the log would overdraw anything.
pub fn replay(initial: &[Micros], transfers: &[Transfer]) -> Option<(Vec<Micros>, Micros)> {
    let mut wallets = initial.to_vec();
    let mut held = vec![0u64; initial.len()];
    let mut pool: Micros = 0;
    for t in transfers {
        let (w, h) = (wallets.get_mut(t.agent)?, held.get_mut(t.agent)?);
        match t.kind {
            TransferKind::Deposit => {
                *w = w.checked_sub(t.amount)?;
                *h += t.amount;
            }
            TransferKind::Refund => {
                *h = h.checked_sub(t.amount)?;
                *w += t.amount;
            }
            TransferKind::Forfeit => {
                *h = h.checked_sub(t.amount)?;
                pool += t.amount;
            }
            TransferKind::PartialReturn => {
                pool = pool.checked_sub(t.amount)?;
                *w += t.amount;
            }
        }
    }
    Some((wallets, pool))
}
