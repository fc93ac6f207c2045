use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mam::{mam_publish, MamChannel};
use super::tangle::Tangle;
use super::transaction::{Address, TxId};
use super::LedgerError;

/// A tangle shared between threads.
///
/// Appends pick tips and hash under a read lock, then take the write lock
/// only to attach. Issuers racing on the same tip snapshot therefore
/// approve overlapping parents and the graph widens, as it would with real
/// concurrent nodes. Attachment itself is serialized.
#[derive(Clone)]
pub struct Ledger {
    tangle: Arc<RwLock<Tangle>>,
    tip_rng: Arc<Mutex<ChaCha8Rng>>,
}

impl Ledger {
    pub fn new(seed: u64) -> Self {
        Self::from_tangle(Tangle::new(seed))
    }

    pub fn from_tangle(tangle: Tangle) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(tangle.seed() ^ 0x5eed_1ed6_e000_0001);
        Ledger { tangle: Arc::new(RwLock::new(tangle)), tip_rng: Arc::new(Mutex::new(rng)) }
    }

    pub fn append(&self, payload: Vec<u8>, channel: Option<Address>) -> Result<TxId, LedgerError> {
        let draft = {
            let t = self.tangle.read();
            let (a, b) = t.select_tips_with(&mut *self.tip_rng.lock());
            t.draft([a, b], payload, channel)?
        };
        // Parents never leave the tangle, so the draft is still attachable.
        self.tangle.write().attach(draft)
    }

    /// Publishes under the write lock so channel indices stay in order.
    pub fn publish(&self, channel: &mut MamChannel, message: &[u8]) -> Result<TxId, LedgerError> {
        mam_publish(&mut self.tangle.write(), channel, message)
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Tangle> {
        self.tangle.read()
    }

    /// Exclusive access, e.g. for batches.
    pub fn write(&self) -> RwLockWriteGuard<'_, Tangle> {
        self.tangle.write()
    }

    pub fn len(&self) -> usize {
        self.tangle.read().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
