//! Masked-authenticated-messaging channels on top of the tangle.
//!
//! A channel is identified by a 32-byte root. Its address depends on the
//! mode:
//!
//! | mode       | address                    | body                          |
//! |------------|----------------------------|-------------------------------|
//! | Public     | `root`                     | plaintext                     |
//! | Private    | `H(root)`                  | sealed under a key from root  |
//! | Restricted | `H(root ‖ side_key)`       | sealed under root + side key  |
//!
//! `H` is SHA-256 and sealing is ChaCha20-Poly1305. The restricted
//! concatenation order (root first, then side key) is this crate's
//! convention.
//!
//! Every message carries a fixed header with its index and the id of the
//! previous message on the channel, so subscribers can walk the channel in
//! order and ignore anything that does not link up.

use std::collections::HashMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use serde::{Deserialize, Serialize};

use super::tangle::{Batch, Tangle};
use super::transaction::{sha256, Address, TxId, MAX_PAYLOAD};
use super::LedgerError;

const MAGIC: &[u8; 4] = b"MAM1";
const HEADER_LEN: usize = 4 + 1 + 8 + 32;
const TAG_LEN: usize = 16;
const KEY_DOMAIN: &[u8] = b"maskbond/mam/key";
const NONCE_DOMAIN: &[u8] = b"maskbond/mam/nonce";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MamMode {
    Public,
    Private,
    Restricted,
}

impl MamMode {
    fn tag(self) -> u8 {
        match self {
            MamMode::Public => 0,
            MamMode::Private => 1,
            MamMode::Restricted => 2,
        }
    }
}

/// What a subscriber must know to read a non-public channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MamKeys {
    pub root: [u8; 32],
    pub side_key: Option<Vec<u8>>,
}

pub fn channel_address(mode: MamMode, root: &[u8; 32], side_key: Option<&[u8]>) -> Result<Address, LedgerError> {
    match (mode, side_key) {
        (MamMode::Public, None) => Ok(Address(*root)),
        (MamMode::Private, None) => Ok(Address(sha256(&[root]))),
        (MamMode::Restricted, Some(k)) => Ok(Address(sha256(&[root, k]))),
        (MamMode::Restricted, None) => Err(LedgerError::MissingSideKey),
        (mode, Some(_)) => Err(LedgerError::UnexpectedSideKey(mode)),
    }
}

fn body_key(mode: MamMode, keys: &MamKeys) -> Option<[u8; 32]> {
    match (mode, &keys.side_key) {
        (MamMode::Public, _) => None,
        (MamMode::Private, _) => Some(sha256(&[KEY_DOMAIN, &keys.root])),
        (MamMode::Restricted, Some(k)) => Some(sha256(&[KEY_DOMAIN, &keys.root, k])),
        (MamMode::Restricted, None) => None,
    }
}

fn nonce(address: &Address, index: u64) -> [u8; 12] {
    let h = sha256(&[NONCE_DOMAIN, &address.0, &index.to_be_bytes()]);
    let mut n = [0u8; 12];
    n.copy_from_slice(&h[..12]);
    n
}

fn header(mode: MamMode, index: u64, prev: &TxId) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4] = mode.tag();
    h[5..13].copy_from_slice(&index.to_be_bytes());
    h[13..].copy_from_slice(&prev.0);
    h
}

/// Largest message body a channel in `mode` can carry in one transaction.
pub fn max_message_len(mode: MamMode) -> usize {
    match mode {
        MamMode::Public => MAX_PAYLOAD - HEADER_LEN,
        _ => MAX_PAYLOAD - HEADER_LEN - TAG_LEN,
    }
}

/// Publisher-side channel state.
#[derive(Debug, Clone)]
pub struct MamChannel {
    mode: MamMode,
    root: [u8; 32],
    side_key: Option<Vec<u8>>,
    address: Address,
    next_index: u64,
    last: Option<TxId>,
}

impl MamChannel {
    pub fn new(mode: MamMode, root: [u8; 32], side_key: Option<Vec<u8>>) -> Result<Self, LedgerError> {
        let address = channel_address(mode, &root, side_key.as_deref())?;
        Ok(MamChannel { mode, root, side_key, address, next_index: 0, last: None })
    }

    /// Derives a channel root from a label; handy for deterministic setups.
    pub fn from_label(mode: MamMode, label: &str, side_key: Option<Vec<u8>>) -> Result<Self, LedgerError> {
        Self::new(mode, sha256(&[b"maskbond/mam/root/", label.as_bytes()]), side_key)
    }

    pub fn mode(&self) -> MamMode {
        self.mode
    }

    pub fn root(&self) -> &[u8; 32] {
        &self.root
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn keys(&self) -> MamKeys {
        MamKeys { root: self.root, side_key: self.side_key.clone() }
    }

    fn seal(&self, message: &[u8]) -> Result<Vec<u8>, LedgerError> {
        let max = max_message_len(self.mode);
        if message.len() > max {
            return Err(LedgerError::PayloadTooLarge { size: message.len(), max });
        }
        let prev = self.last.unwrap_or(TxId::ZERO);
        let head = header(self.mode, self.next_index, &prev);
        let mut out = head.to_vec();
        match body_key(self.mode, &self.keys()) {
            None => out.extend_from_slice(message),
            Some(key) => {
                let cipher = ChaCha20Poly1305::new(&Key::from(key));
                let n = Nonce::from(nonce(&self.address, self.next_index));
                let sealed = cipher
                    .encrypt(&n, Payload { msg: message, aad: &head })
                    .map_err(|_| LedgerError::Encryption)?;
                out.extend_from_slice(&sealed);
            }
        }
        Ok(out)
    }

    fn advance(&mut self, id: TxId) {
        self.next_index += 1;
        self.last = Some(id);
    }

    /// Fast-forwards publisher state to the end of what is already on the
    /// tangle, so a restarted publisher continues the chain.
    pub fn resume(&mut self, tangle: &Tangle) {
        let mut cursor = ChannelCursor::new(self.address, self.mode, Some(self.keys()));
        let messages = cursor.fetch_new(tangle);
        if let Some(last) = messages.last() {
            self.next_index = last.index + 1;
            self.last = Some(last.tx);
        }
    }
}

/// A decoded channel message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MamMessage {
    pub index: u64,
    pub tx: TxId,
    pub body: Vec<u8>,
}

pub fn mam_publish(tangle: &mut Tangle, channel: &mut MamChannel, message: &[u8]) -> Result<TxId, LedgerError> {
    let payload = channel.seal(message)?;
    let id = tangle.append(payload, Some(channel.address))?;
    channel.advance(id);
    Ok(id)
}

/// Publishes into a pending batch. The channel advances immediately; if the
/// batch is dropped uncommitted, call [`MamChannel::resume`] to rewind.
pub fn mam_publish_in(batch: &mut Batch<'_>, channel: &mut MamChannel, message: &[u8]) -> Result<TxId, LedgerError> {
    let payload = channel.seal(message)?;
    let id = batch.push(payload, Some(channel.address))?;
    channel.advance(id);
    Ok(id)
}

/// All messages decodable with `keys`, in channel order. Unknown addresses
/// and wrong keys both give an empty list.
pub fn mam_fetch(tangle: &Tangle, address: &Address, mode: MamMode, keys: Option<&MamKeys>) -> Vec<MamMessage> {
    ChannelCursor::new(*address, mode, keys.cloned()).fetch_new(tangle)
}

/// Incremental subscriber: remembers how far it has read so repeated polls
/// only decode new transactions.
#[derive(Debug, Clone)]
pub struct ChannelCursor {
    address: Address,
    mode: MamMode,
    key: Option<[u8; 32]>,
    scanned: usize,
    next_index: u64,
    last: TxId,
    pending: HashMap<u64, Vec<(TxId, TxId, Vec<u8>)>>,
}

impl ChannelCursor {
    pub fn new(address: Address, mode: MamMode, keys: Option<MamKeys>) -> Self {
        let key = keys.as_ref().and_then(|k| body_key(mode, k));
        ChannelCursor {
            address,
            mode,
            key,
            scanned: 0,
            next_index: 0,
            last: TxId::ZERO,
            pending: HashMap::new(),
        }
    }

    pub fn for_channel(channel: &MamChannel) -> Self {
        Self::new(channel.address(), channel.mode(), Some(channel.keys()))
    }

    pub fn address(&self) -> Address {
        self.address
    }

    fn decode(&self, payload: &[u8]) -> Option<(u64, TxId, Vec<u8>)> {
        if payload.len() < HEADER_LEN || &payload[..4] != MAGIC || payload[4] != self.mode.tag() {
            return None;
        }
        let head = &payload[..HEADER_LEN];
        let index = u64::from_be_bytes(payload[5..13].try_into().ok()?);
        let prev = TxId(payload[13..HEADER_LEN].try_into().ok()?);
        let body = &payload[HEADER_LEN..];
        let plain = match self.mode {
            MamMode::Public => body.to_vec(),
            _ => {
                let key = self.key?;
                let cipher = ChaCha20Poly1305::new(&Key::from(key));
                let n = Nonce::from(nonce(&self.address, index));
                cipher.decrypt(&n, Payload { msg: body, aad: head }).ok()?
            }
        };
        Some((index, prev, plain))
    }

    /// Decodes transactions appended since the last call and returns the
    /// messages that extend the verified chain.
    pub fn fetch_new(&mut self, tangle: &Tangle) -> Vec<MamMessage> {
        let ids = tangle.channel(&self.address);
        for id in &ids[self.scanned.min(ids.len())..] {
            let Some(tx) = tangle.get(id) else { continue };
            if let Some((index, prev, body)) = self.decode(&tx.payload) {
                if index >= self.next_index {
                    self.pending.entry(index).or_default().push((*id, prev, body));
                }
            }
        }
        self.scanned = ids.len();

        let mut out = Vec::new();
        while let Some(candidates) = self.pending.get_mut(&self.next_index) {
            let Some(pos) = candidates.iter().position(|(_, prev, _)| *prev == self.last) else {
                break;
            };
            let (tx, _, body) = candidates.swap_remove(pos);
            self.pending.remove(&self.next_index);
            out.push(MamMessage { index: self.next_index, tx, body });
            self.last = tx;
            self.next_index += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(mode: MamMode, side_key: Option<Vec<u8>>) {
        let mut t = Tangle::new(0);
        let mut ch = MamChannel::from_label(mode, "rt", side_key).unwrap();
        for m in [&b"one"[..], b"two", b"three"] {
            mam_publish(&mut t, &mut ch, m).unwrap();
        }
        let got = mam_fetch(&t, &ch.address(), mode, Some(&ch.keys()));
        let bodies: Vec<_> = got.iter().map(|m| m.body.as_slice()).collect();
        assert_eq!(bodies, vec![&b"one"[..], b"two", b"three"]);
        assert_eq!(got.iter().map(|m| m.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn round_trip_all_modes() {
        round_trip(MamMode::Public, None);
        round_trip(MamMode::Private, None);
        round_trip(MamMode::Restricted, Some(b"k1".to_vec()));
    }

    #[test]
    fn public_address_is_root() {
        let a = channel_address(MamMode::Public, &[0; 32], None).unwrap();
        assert_eq!(a, Address::ZERO);
    }

    #[test]
    fn private_address_golden() {
        // SHA-256 of 32 zero bytes.
        let a = channel_address(MamMode::Private, &[0; 32], None).unwrap();
        assert_eq!(a.to_hex(), "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925");
    }

    #[test]
    fn side_key_rules() {
        assert!(matches!(
            channel_address(MamMode::Restricted, &[0; 32], None),
            Err(LedgerError::MissingSideKey)
        ));
        assert!(matches!(
            channel_address(MamMode::Private, &[0; 32], Some(b"k")),
            Err(LedgerError::UnexpectedSideKey(MamMode::Private))
        ));
        let a1 = channel_address(MamMode::Restricted, &[0; 32], Some(b"k1")).unwrap();
        let a2 = channel_address(MamMode::Restricted, &[0; 32], Some(b"k2")).unwrap();
        assert_ne!(a1, a2);
    }

    #[test]
    fn restricted_without_right_key_yields_nothing() {
        let mut t = Tangle::new(0);
        let mut ch = MamChannel::from_label(MamMode::Restricted, "r", Some(b"right".to_vec())).unwrap();
        mam_publish(&mut t, &mut ch, b"secret").unwrap();
        let wrong = MamKeys { root: *ch.root(), side_key: Some(b"wrong".to_vec()) };
        assert!(mam_fetch(&t, &ch.address(), MamMode::Restricted, Some(&wrong)).is_empty());
        assert!(mam_fetch(&t, &ch.address(), MamMode::Restricted, None).is_empty());
        // The ciphertext on the tangle does not contain the plaintext.
        let tx = t.get(&t.channel(&ch.address())[0]).unwrap();
        assert!(!tx.payload.windows(6).any(|w| w == b"secret"));
    }

    #[test]
    fn private_needs_root() {
        let mut t = Tangle::new(0);
        let mut ch = MamChannel::from_label(MamMode::Private, "p", None).unwrap();
        mam_publish(&mut t, &mut ch, b"hidden").unwrap();
        assert!(mam_fetch(&t, &ch.address(), MamMode::Private, None).is_empty());
        let wrong = MamKeys { root: [7; 32], side_key: None };
        assert!(mam_fetch(&t, &ch.address(), MamMode::Private, Some(&wrong)).is_empty());
    }

    #[test]
    fn unknown_address_is_empty() {
        let t = Tangle::new(0);
        assert!(mam_fetch(&t, &Address([5; 32]), MamMode::Public, None).is_empty());
    }

    #[test]
    fn cursor_reads_incrementally_and_resume_continues_chain() {
        let mut t = Tangle::new(1);
        let mut ch = MamChannel::from_label(MamMode::Public, "c", None).unwrap();
        let mut cur = ChannelCursor::for_channel(&ch);
        mam_publish(&mut t, &mut ch, b"a").unwrap();
        assert_eq!(cur.fetch_new(&t).len(), 1);
        assert!(cur.fetch_new(&t).is_empty());

        let mut restarted = MamChannel::from_label(MamMode::Public, "c", None).unwrap();
        restarted.resume(&t);
        assert_eq!(restarted.next_index(), 1);
        mam_publish(&mut t, &mut restarted, b"b").unwrap();
        let got = cur.fetch_new(&t);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].body, b"b");
    }

    #[test]
    fn forged_message_breaking_the_chain_is_ignored() {
        let mut t = Tangle::new(1);
        let mut ch = MamChannel::from_label(MamMode::Public, "c", None).unwrap();
        mam_publish(&mut t, &mut ch, b"a").unwrap();
        // Same index 1, but linked to nothing.
        let mut forger = MamChannel::from_label(MamMode::Public, "c", None).unwrap();
        forger.next_index = 1;
        mam_publish(&mut t, &mut forger, b"forged").unwrap();
        mam_publish(&mut t, &mut ch, b"b").unwrap();
        let bodies: Vec<_> = mam_fetch(&t, &ch.address(), MamMode::Public, None).into_iter().map(|m| m.body).collect();
        assert_eq!(bodies, vec![b"a".to_vec(), b"b".to_vec()]);
    }

    #[test]
    fn batch_publishes_chain_within_one_batch() {
        let mut t = Tangle::new(2);
        let mut ch = MamChannel::from_label(MamMode::Restricted, "b", Some(vec![1, 2, 3])).unwrap();
        let mut b = t.batch();
        for i in 0..4u8 {
            mam_publish_in(&mut b, &mut ch, &[i]).unwrap();
        }
        b.commit().unwrap();
        let got = mam_fetch(&t, &ch.address(), MamMode::Restricted, Some(&ch.keys()));
        assert_eq!(got.iter().map(|m| m.body[0]).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn oversize_message_is_rejected() {
        let mut t = Tangle::new(0);
        let mut ch = MamChannel::from_label(MamMode::Private, "o", None).unwrap();
        let too_big = vec![0u8; max_message_len(MamMode::Private) + 1];
        assert!(matches!(mam_publish(&mut t, &mut ch, &too_big), Err(LedgerError::PayloadTooLarge { .. })));
        assert!(mam_publish(&mut t, &mut ch, &too_big[1..]).is_ok());
    }
}
