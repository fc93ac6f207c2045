//! Versioned JSON snapshots of a tangle.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tangle::Tangle;
use super::transaction::{Address, Transaction, TxId};
use super::verify::{verify_records, VerifyReport};

pub const SNAPSHOT_FORMAT: &str = "maskbond-tangle";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot is not valid JSON for this format: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported snapshot format {format:?} version {version}")]
    Unsupported { format: String, version: u32 },
    #[error("record {index}: {reason}")]
    BadRecord { index: usize, reason: String },
    #[error("snapshot failed verification: {}", .0.violations.first().map(ToString::to_string).unwrap_or_default())]
    Invalid(VerifyReport),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    format: String,
    version: u32,
    seed: u64,
    rng_word_pos: u128,
    genesis: TxId,
    tips: Vec<TxId>,
    transactions: Vec<RecordFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordFile {
    id: TxId,
    parents: [TxId; 2],
    channel: Option<Address>,
    logical_time: u64,
    payload: String,
}

/// A parsed but not yet trusted snapshot.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub seed: u64,
    pub rng_word_pos: u128,
    pub genesis: TxId,
    pub tips: Vec<TxId>,
    pub records: Vec<Transaction>,
}

impl Snapshot {
    pub fn of(tangle: &Tangle) -> Self {
        Snapshot {
            seed: tangle.seed(),
            rng_word_pos: tangle.rng_word_pos(),
            genesis: tangle.genesis(),
            tips: tangle.tips().copied().collect(),
            records: tangle.transactions().cloned().collect(),
        }
    }

    pub fn verify(&self) -> VerifyReport {
        let mut report = verify_records(&self.records, Some(&self.tips));
        if self.records.first().is_some_and(|g| g.id != self.genesis) {
            report.violations.push(super::Violation::GenesisMissing);
        }
        report
    }

    /// Verifies and rebuilds the tangle, including its tip-selection stream.
    pub fn into_tangle(self) -> Result<Tangle, SnapshotError> {
        let report = self.verify();
        if !report.is_clean() {
            return Err(SnapshotError::Invalid(report));
        }
        Tangle::from_records(self.records, self.seed, self.rng_word_pos).map_err(SnapshotError::Invalid)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<(), SnapshotError> {
        let file = SnapshotFile {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            seed: self.seed,
            rng_word_pos: self.rng_word_pos,
            genesis: self.genesis,
            tips: self.tips.clone(),
            transactions: self
                .records
                .iter()
                .map(|tx| RecordFile {
                    id: tx.id,
                    parents: tx.parents,
                    channel: tx.channel,
                    logical_time: tx.logical_time,
                    payload: hex::encode(&tx.payload),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self, SnapshotError> {
        let file: SnapshotFile = serde_json::from_reader(r)?;
        if file.format != SNAPSHOT_FORMAT || file.version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Unsupported { format: file.format, version: file.version });
        }
        let records = file
            .transactions
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                let payload = hex::decode(&r.payload)
                    .map_err(|e| SnapshotError::BadRecord { index, reason: format!("payload hex: {e}") })?;
                Ok(Transaction { id: r.id, parents: r.parents, payload, channel: r.channel, logical_time: r.logical_time })
            })
            .collect::<Result<Vec<_>, SnapshotError>>()?;
        Ok(Snapshot { seed: file.seed, rng_word_pos: file.rng_word_pos, genesis: file.genesis, tips: file.tips, records })
    }
}

pub fn write_snapshot(tangle: &Tangle, path: &Path) -> Result<(), SnapshotError> {
    let mut w = BufWriter::new(File::create(path)?);
    Snapshot::of(tangle).to_writer(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses a snapshot file. Call [`Snapshot::into_tangle`] to verify and load.
pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    Snapshot::from_reader(BufReader::new(File::open(path)?))
}

/// Summary printed by `maskbond ledger inspect`.
#[derive(Debug, Clone, Serialize)]
pub struct InspectReport {
    pub transactions: usize,
    pub tips: usize,
    pub depth: usize,
    pub channels: BTreeMap<String, usize>,
    pub violations: Vec<String>,
}

pub fn inspect(snapshot: &Snapshot) -> InspectReport {
    let report = snapshot.verify();
    let mut channels = BTreeMap::new();
    for tx in &snapshot.records {
        if let Some(a) = tx.channel {
            *channels.entry(a.to_hex()).or_insert(0) += 1;
        }
    }
    InspectReport {
        transactions: report.transactions,
        tips: report.tips,
        depth: report.depth,
        channels,
        violations: report.violations.iter().map(ToString::to_string).collect(),
    }
}
