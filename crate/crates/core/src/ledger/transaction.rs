use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Maximum payload accepted by a single transaction.
pub const MAX_PAYLOAD: usize = 4 * 1024;

const TX_DOMAIN: &[u8] = b"maskbond/tx/v1";
const GENESIS_PAYLOAD: &[u8] = b"maskbond genesis";

/// SHA-256, the one hash used across the ledger.
pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

macro_rules! hash_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub const ZERO: Self = Self([0; 32]);

            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                let mut out = [0u8; 32];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}…)", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hash_newtype!(
    /// Content hash identifying a transaction.
    TxId
);
hash_newtype!(
    /// 32-byte MAM channel address.
    Address
);

/// A node of the tangle. Immutable once attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub id: TxId,
    pub parents: [TxId; 2],
    pub payload: Vec<u8>,
    pub channel: Option<Address>,
    pub logical_time: u64,
}

impl Transaction {
    pub(crate) fn genesis() -> Self {
        let id = content_hash(&[TxId::ZERO, TxId::ZERO], GENESIS_PAYLOAD, None);
        Transaction {
            id,
            parents: [id, id],
            payload: GENESIS_PAYLOAD.to_vec(),
            channel: None,
            logical_time: 0,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.parents[0] == self.id && self.parents[1] == self.id
    }

    /// Recomputes the content hash from the stored fields.
    ///
    /// Genesis is hashed with zeroed parents, since it cannot contain its own
    /// id; its stored parents point at itself.
    pub fn recompute_id(&self) -> TxId {
        if self.is_genesis() {
            content_hash(&[TxId::ZERO, TxId::ZERO], &self.payload, self.channel.as_ref())
        } else {
            content_hash(&self.parents, &self.payload, self.channel.as_ref())
        }
    }

    pub fn verify(&self) -> bool {
        self.recompute_id() == self.id
    }
}

/// `H(domain ‖ parent0 ‖ parent1 ‖ channel_flag ‖ [channel] ‖ len_be32 ‖ payload)`.
pub fn content_hash(parents: &[TxId; 2], payload: &[u8], channel: Option<&Address>) -> TxId {
    let len = (payload.len() as u32).to_be_bytes();
    let id = match channel {
        Some(addr) => sha256(&[
            TX_DOMAIN,
            &parents[0].0,
            &parents[1].0,
            &[1],
            &addr.0,
            &len,
            payload,
        ]),
        None => sha256(&[TX_DOMAIN, &parents[0].0, &parents[1].0, &[0], &len, payload]),
    };
    TxId(id)
}
