//! Structural verification of a transaction sequence.
//!
//! Works on plain records rather than a [`Tangle`](super::Tangle) so it can
//! check snapshots that would fail to load.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::transaction::{Transaction, TxId, MAX_PAYLOAD};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    GenesisMissing,
    ExtraGenesis { index: usize, id: TxId },
    DuplicateId { index: usize, id: TxId },
    HashMismatch { index: usize, id: TxId, recomputed: TxId },
    UnknownParent { index: usize, id: TxId, parent: TxId },
    ParentNotEarlier { index: usize, id: TxId, parent: TxId },
    LogicalTimeNotIncreasing { index: usize, id: TxId },
    PayloadTooLarge { index: usize, id: TxId, size: usize },
    Cycle { remaining: usize },
    Unreachable { id: TxId },
    TipMismatch { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Empty => write!(f, "no transactions"),
            GenesisMissing => write!(f, "record 0 is not a self-parented genesis"),
            ExtraGenesis { index, id } => write!(f, "record {index} ({id}) claims to be a second genesis"),
            DuplicateId { index, id } => write!(f, "record {index}: duplicate id {id}"),
            HashMismatch { index, id, recomputed } => {
                write!(f, "record {index}: content hash mismatch, stored {id}, recomputed {recomputed}")
            }
            UnknownParent { index, id, parent } => write!(f, "record {index} ({id}): parent {parent} not found"),
            ParentNotEarlier { index, id, parent } => {
                write!(f, "record {index} ({id}): parent {parent} appears later in the sequence")
            }
            LogicalTimeNotIncreasing { index, id } => {
                write!(f, "record {index} ({id}): logical time does not increase")
            }
            PayloadTooLarge { index, id, size } => {
                write!(f, "record {index} ({id}): payload of {size} bytes exceeds {MAX_PAYLOAD}")
            }
            Cycle { remaining } => write!(f, "parent relation has a cycle ({remaining} nodes unsorted)"),
            Unreachable { id } => write!(f, "{id} does not reach genesis"),
            TipMismatch { expected, found } => {
                write!(f, "stored tip set ({found}) differs from recomputed ({expected})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub transactions: usize,
    pub tips: usize,
    /// Longest parent path from any transaction down to genesis.
    pub depth: usize,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks content addressing, the two-parent rule, ordering, acyclicity,
/// genesis reachability, and (when given) the stored tip set.
pub fn verify_records(records: &[Transaction], stored_tips: Option<&[TxId]>) -> VerifyReport {
    let mut report = VerifyReport { transactions: records.len(), ..Default::default() };
    let Some(first) = records.first() else {
        report.violations.push(Violation::Empty);
        return report;
    };
    let v = &mut report.violations;
    if !first.is_genesis() {
        v.push(Violation::GenesisMissing);
    }

    let mut position: HashMap<TxId, usize> = HashMap::with_capacity(records.len());
    for (index, tx) in records.iter().enumerate() {
        if position.insert(tx.id, index).is_some() {
            v.push(Violation::DuplicateId { index, id: tx.id });
        }
    }

    for (index, tx) in records.iter().enumerate() {
        let recomputed = tx.recompute_id();
        if recomputed != tx.id {
            v.push(Violation::HashMismatch { index, id: tx.id, recomputed });
        }
        if tx.payload.len() > MAX_PAYLOAD {
            v.push(Violation::PayloadTooLarge { index, id: tx.id, size: tx.payload.len() });
        }
        if index > 0 {
            if tx.is_genesis() {
                v.push(Violation::ExtraGenesis { index, id: tx.id });
            }
            if tx.logical_time <= records[index - 1].logical_time {
                v.push(Violation::LogicalTimeNotIncreasing { index, id: tx.id });
            }
            for parent in tx.parents {
                match position.get(&parent) {
                    None => v.push(Violation::UnknownParent { index, id: tx.id, parent }),
                    Some(&p) if p >= index => {
                        v.push(Violation::ParentNotEarlier { index, id: tx.id, parent })
                    }
                    _ => {}
                }
            }
        }
    }

    // Kahn's algorithm over the parent edges, ignoring genesis self-loops.
    let n = records.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pending = vec![0usize; n];
    for (i, tx) in records.iter().enumerate() {
        if tx.is_genesis() {
            continue;
        }
        let mut seen = HashSet::new();
        for parent in tx.parents {
            if let Some(&p) = position.get(&parent) {
                if seen.insert(p) {
                    children[p].push(i);
                    pending[i] += 1;
                }
            }
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut depth = vec![0usize; n];
    let mut sorted = 0usize;
    while let Some(i) = queue.pop_front() {
        sorted += 1;
        for &c in &children[i] {
            depth[c] = depth[c].max(depth[i] + 1);
            pending[c] -= 1;
            if pending[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if sorted < n {
        v.push(Violation::Cycle { remaining: n - sorted });
    }
    report.depth = depth.iter().copied().max().unwrap_or(0);

    // Walk approvals upward from genesis; everything must be reached.
    let mut reached = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    reached[0] = true;
    while let Some(i) = queue.pop_front() {
        for &c in &children[i] {
            if !reached[c] {
                reached[c] = true;
                queue.push_back(c);
            }
        }
    }
    for (i, tx) in records.iter().enumerate() {
        if !reached[i] {
            v.push(Violation::Unreachable { id: tx.id });
        }
    }

    let tips: HashSet<TxId> = (0..n).filter(|&i| children[i].is_empty()).map(|i| records[i].id).collect();
    report.tips = tips.len();
    if let Some(stored) = stored_tips {
        let stored: HashSet<TxId> = stored.iter().copied().collect();
        if stored != tips {
            report.violations.push(Violation::TipMismatch { expected: tips.len(), found: stored.len() });
        }
    }
    report
}
