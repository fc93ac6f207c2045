//! Tangle ledger, MAM channels and snapshots.

mod mam;
mod shared;
mod snapshot;
mod tangle;
mod transaction;
mod verify;

pub use mam::{
    channel_address, mam_fetch, mam_publish, mam_publish_in, max_message_len, ChannelCursor, MamChannel, MamKeys,
    MamMessage, MamMode,
};
pub use shared::Ledger;
pub use snapshot::{inspect, read_snapshot, write_snapshot, InspectReport, Snapshot, SnapshotError, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};
pub use tangle::{Batch, Draft, Tangle};
pub use transaction::{content_hash, sha256, Address, Transaction, TxId, MAX_PAYLOAD};
pub use verify::{verify_records, Violation, VerifyReport};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("payload of {size} bytes exceeds the {max}-byte limit")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("parent {parent} is not in the tangle")]
    UnknownParent { parent: TxId },
    #[error("restricted channels need a side key")]
    MissingSideKey,
    #[error("{0:?} channels take no side key")]
    UnexpectedSideKey(MamMode),
    #[error("message encryption failed")]
    Encryption,
}
