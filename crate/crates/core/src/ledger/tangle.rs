use std::collections::HashMap;

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transaction::{content_hash, Address, Transaction, TxId, MAX_PAYLOAD};
use super::verify::{verify_records, VerifyReport};
use super::LedgerError;

/// Append-only DAG of transactions, each approving two earlier ones.
///
/// Tip selection draws uniformly with replacement from the current tip set
/// using a seeded ChaCha stream, so a given seed and append sequence always
/// yields the same graph.
#[derive(Debug, Clone)]
pub struct Tangle {
    txs: HashMap<TxId, Transaction>,
    order: Vec<TxId>,
    tips: IndexSet<TxId>,
    channels: HashMap<Address, Vec<TxId>>,
    genesis: TxId,
    seed: u64,
    rng: ChaCha8Rng,
}

/// A transaction whose parents and id are fixed but which is not yet attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub id: TxId,
    pub parents: [TxId; 2],
    pub payload: Vec<u8>,
    pub channel: Option<Address>,
}

impl Tangle {
    pub fn new(seed: u64) -> Self {
        let genesis = Transaction::genesis();
        let gid = genesis.id;
        let mut txs = HashMap::new();
        txs.insert(gid, genesis);
        let mut tips = IndexSet::new();
        tips.insert(gid);
        Tangle {
            txs,
            order: vec![gid],
            tips,
            channels: HashMap::new(),
            genesis: gid,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn genesis(&self) -> TxId {
        self.genesis
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn get(&self, id: &TxId) -> Option<&Transaction> {
        self.txs.get(id)
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.txs.contains_key(id)
    }

    /// Transactions in append order.
    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> + '_ {
        self.order.iter().map(move |id| &self.txs[id])
    }

    pub fn tips(&self) -> impl Iterator<Item = &TxId> + '_ {
        self.tips.iter()
    }

    pub fn tip_count(&self) -> usize {
        self.tips.len()
    }

    /// Ids of the transactions carrying `address`, in append order.
    pub fn channel(&self, address: &Address) -> &[TxId] {
        self.channels.get(address).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn channel_addresses(&self) -> impl Iterator<Item = (&Address, usize)> + '_ {
        self.channels.iter().map(|(a, v)| (a, v.len()))
    }

    /// Two tips, uniform with replacement, from the tangle's own stream.
    pub fn select_tips(&mut self) -> (TxId, TxId) {
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let pair = self.select_tips_with(&mut rng);
        self.rng = rng;
        pair
    }

    /// Two tips, uniform with replacement, from a caller-supplied stream.
    pub fn select_tips_with<R: Rng + ?Sized>(&self, rng: &mut R) -> (TxId, TxId) {
        let n = self.tips.len();
        let a = self.tips[rng.random_range(0..n)];
        let b = self.tips[rng.random_range(0..n)];
        (a, b)
    }

    /// Builds a draft on explicit parents without touching the tangle.
    pub fn draft(
        &self,
        parents: [TxId; 2],
        payload: Vec<u8>,
        channel: Option<Address>,
    ) -> Result<Draft, LedgerError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(LedgerError::PayloadTooLarge { size: payload.len(), max: MAX_PAYLOAD });
        }
        let id = content_hash(&parents, &payload, channel.as_ref());
        Ok(Draft { id, parents, payload, channel })
    }

    /// Attaches a draft. Both parents must already be present.
    ///
    /// Re-attaching identical content on identical parents is idempotent and
    /// returns the existing id.
    pub fn attach(&mut self, draft: Draft) -> Result<TxId, LedgerError> {
        for p in &draft.parents {
            if !self.txs.contains_key(p) {
                return Err(LedgerError::UnknownParent { parent: *p });
            }
        }
        if self.txs.contains_key(&draft.id) {
            return Ok(draft.id);
        }
        let tx = Transaction {
            id: draft.id,
            parents: draft.parents,
            payload: draft.payload,
            channel: draft.channel,
            logical_time: self.order.len() as u64,
        };
        for p in &tx.parents {
            self.tips.swap_remove(p);
        }
        self.tips.insert(tx.id);
        if let Some(addr) = tx.channel {
            self.channels.entry(addr).or_default().push(tx.id);
        }
        self.order.push(tx.id);
        let id = tx.id;
        self.txs.insert(id, tx);
        Ok(id)
    }

    pub fn append(&mut self, payload: Vec<u8>, channel: Option<Address>) -> Result<TxId, LedgerError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(LedgerError::PayloadTooLarge { size: payload.len(), max: MAX_PAYLOAD });
        }
        let (a, b) = self.select_tips();
        let draft = self.draft([a, b], payload, channel)?;
        self.attach(draft)
    }

    /// Starts a batch of independent appends: every draft in the batch picks
    /// its parents from the tip set as it stood when the batch began, as
    /// concurrent issuers that cannot see each other would.
    pub fn batch(&mut self) -> Batch<'_> {
        Batch { tangle: self, drafts: Vec::new() }
    }

    pub fn verify(&self) -> VerifyReport {
        let records: Vec<Transaction> = self.transactions().cloned().collect();
        let tips: Vec<TxId> = self.tips.iter().copied().collect();
        verify_records(&records, Some(&tips))
    }

    /// Rebuilds a tangle from verified records, restoring the tip stream
    /// position so appends continue exactly where they left off.
    pub(crate) fn from_records(
        records: Vec<Transaction>,
        seed: u64,
        word_pos: u128,
    ) -> Result<Self, VerifyReport> {
        let report = verify_records(&records, None);
        if !report.is_clean() {
            return Err(report);
        }
        let mut t = Tangle::new(seed);
        t.rng.set_word_pos(word_pos);
        for tx in records.into_iter().skip(1) {
            let draft = Draft { id: tx.id, parents: tx.parents, payload: tx.payload, channel: tx.channel };
            t.attach(draft).expect("verified records attach in order");
        }
        Ok(t)
    }
}

/// Pending drafts sharing one tip snapshot. Nothing is attached until
/// [`Batch::commit`]; dropping the batch discards it.
pub struct Batch<'a> {
    tangle: &'a mut Tangle,
    drafts: Vec<Draft>,
}

impl Batch<'_> {
    /// Drafts one transaction and returns the id it will have once committed.
    pub fn push(&mut self, payload: Vec<u8>, channel: Option<Address>) -> Result<TxId, LedgerError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(LedgerError::PayloadTooLarge { size: payload.len(), max: MAX_PAYLOAD });
        }
        let (a, b) = self.tangle.select_tips();
        let draft = self.tangle.draft([a, b], payload, channel)?;
        let id = draft.id;
        self.drafts.push(draft);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.drafts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drafts.is_empty()
    }

    pub fn commit(self) -> Result<Vec<TxId>, LedgerError> {
        let Batch { tangle, drafts } = self;
        drafts.into_iter().map(|d| tangle.attach(d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashSet};

    use super::*;

    #[test]
    fn first_append_approves_genesis_twice() {
        let mut t = Tangle::new(1);
        let g = t.genesis();
        let id = t.append(b"a".to_vec(), None).unwrap();
        assert_eq!(t.get(&id).unwrap().parents, [g, g]);
        assert_eq!(t.tips().copied().collect::<Vec<_>>(), vec![id]);
    }

    #[test]
    fn single_tip_is_selected_twice() {
        let mut t = Tangle::new(9);
        let g = t.genesis();
        assert_eq!(t.select_tips(), (g, g));
    }

    #[test]
    fn third_append_after_two_independent_ones() {
        // Replay: A and B are drafted against the genesis-only tip set, so
        // the tip set afterwards is exactly {A, B}.
        let mut t = Tangle::new(7);
        let mut b = t.batch();
        let a_id = b.push(b"A".to_vec(), None).unwrap();
        let b_id = b.push(b"B".to_vec(), None).unwrap();
        b.commit().unwrap();
        let tips: BTreeSet<_> = t.tips().copied().collect();
        assert_eq!(tips, BTreeSet::from([a_id, b_id]));

        let c = t.append(b"C".to_vec(), None).unwrap();
        let parents = t.get(&c).unwrap().parents;
        assert!(parents.iter().all(|p| *p == a_id || *p == b_id));
        // Seed 7 draws both distinct tips; enumerate the resulting tip set.
        let expected: BTreeSet<_> = [a_id, b_id]
            .into_iter()
            .filter(|id| !parents.contains(id))
            .chain([c])
            .collect();
        assert_eq!(t.tips().copied().collect::<BTreeSet<_>>(), expected);
        assert_eq!(BTreeSet::from(parents), BTreeSet::from([a_id, b_id]));
    }

    #[test]
    fn tip_selection_is_reproducible() {
        let build = || {
            let mut t = Tangle::new(42);
            let mut b = t.batch();
            b.push(b"A".to_vec(), None).unwrap();
            b.push(b"B".to_vec(), None).unwrap();
            b.commit().unwrap();
            (0..5).map(|_| t.select_tips()).collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn tip_selection_is_uniform_over_two_tips() {
        let mut t = Tangle::new(3);
        let mut b = t.batch();
        let a = b.push(b"A".to_vec(), None).unwrap();
        b.push(b"B".to_vec(), None).unwrap();
        b.commit().unwrap();
        let mut count_a = 0usize;
        for _ in 0..10_000 {
            let (x, y) = t.select_tips();
            count_a += usize::from(x == a) + usize::from(y == a);
        }
        let share = count_a as f64 / 20_000.0;
        assert!((share - 0.5).abs() < 0.02, "share of A = {share}");
    }

    #[test]
    fn oversize_payload_is_rejected() {
        let mut t = Tangle::new(0);
        let err = t.append(vec![0; MAX_PAYLOAD + 1], None).unwrap_err();
        assert!(matches!(err, LedgerError::PayloadTooLarge { .. }));
        assert_eq!(t.len(), 1);
        assert!(t.append(vec![0; MAX_PAYLOAD], None).is_ok());
    }

    #[test]
    fn unknown_parent_is_an_integrity_fault() {
        let mut t = Tangle::new(0);
        let d = t.draft([t.genesis(), TxId([9; 32])], vec![], None).unwrap();
        assert!(matches!(t.attach(d), Err(LedgerError::UnknownParent { .. })));
    }

    #[test]
    fn ten_thousand_appends_form_a_verified_dag() {
        let mut t = Tangle::new(5);
        for round in 0..1_000u32 {
            let mut b = t.batch();
            for j in 0..10u32 {
                b.push(format!("{round}/{j}").into_bytes(), None).unwrap();
            }
            b.commit().unwrap();
        }
        assert_eq!(t.len(), 10_001);
        let report = t.verify();
        assert!(report.is_clean(), "{report:?}");
        let times: Vec<u64> = t.transactions().map(|tx| tx.logical_time).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        // Tips are exactly the childless transactions.
        let mut has_child = HashSet::new();
        for tx in t.transactions().filter(|tx| !tx.is_genesis()) {
            has_child.extend(tx.parents);
        }
        let childless: HashSet<_> = t.transactions().map(|tx| tx.id).filter(|id| !has_child.contains(id)).collect();
        assert_eq!(childless, t.tips().copied().collect());
    }
}
