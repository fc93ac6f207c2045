//! Binary records carried on the bus and stored in channel messages.
//!
//! All integers and floats are big-endian. Each record starts with a tag
//! byte so a channel can carry mixed record kinds.

use crate::escrow::{Transfer, TRANSFER_RECORD_LEN};

const STATUS_TAG: u8 = b'S';
const COST_TAG: u8 = b'C';
const TRANSFER_TAG: u8 = b'T';

/// Individual costs per [`CostRecord`].
pub const COST_CHUNK: usize = 256;
/// Transfers per [`TransferBatch`].
pub const TRANSFER_CHUNK: usize = 128;

pub fn status_topic(agent: u32) -> String {
    format!("mask/{agent}/status")
}

pub const COSTS_TOPIC: &str = "controller/costs";
pub const TRANSFERS_TOPIC: &str = "escrow/transfers";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("expected record tag {expected:#04x}, found {found:#04x}")]
    Tag { expected: u8, found: u8 },
    #[error("record length {0} is invalid")]
    Length(usize),
    #[error("record contains a malformed field")]
    Field,
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Field);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn tag(&mut self, expected: u8) -> Result<(), WireError> {
        match self.u8()? {
            t if t == expected => Ok(()),
            found => Err(WireError::Tag { expected, found }),
        }
    }

    fn finish(self) -> Result<(), WireError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(WireError::Field)
        }
    }
}

/// One agent's compliance observation for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatusRecord {
    pub agent: u32,
    pub step: u64,
    pub mask: bool,
    pub position: Option<[f64; 2]>,
}

impl StatusRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(31);
        out.push(STATUS_TAG);
        out.extend_from_slice(&self.agent.to_be_bytes());
        out.extend_from_slice(&self.step.to_be_bytes());
        out.push(self.mask as u8 | (self.position.is_some() as u8) << 1);
        if let Some([x, y]) = self.position {
            out.extend_from_slice(&x.to_be_bytes());
            out.extend_from_slice(&y.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != 14 && bytes.len() != 30 {
            return Err(WireError::Length(bytes.len()));
        }
        let mut r = Reader(bytes);
        r.tag(STATUS_TAG)?;
        let agent = r.u32()?;
        let step = r.u64()?;
        let flags = r.u8()?;
        if flags > 3 || (flags & 2 != 0) != (bytes.len() == 30) {
            return Err(WireError::Field);
        }
        let position = if flags & 2 != 0 { Some([r.f64()?, r.f64()?]) } else { None };
        r.finish()?;
        Ok(StatusRecord { agent, step, mask: flags & 1 == 1, position })
    }
}

/// Controller state after a step: the global cost and a slice of the
/// individual costs starting at `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRecord {
    pub step: u64,
    pub global_cost: f64,
    pub offset: u32,
    pub costs: Vec<f64>,
}

impl CostRecord {
    /// Splits a full cost vector into records of at most [`COST_CHUNK`].
    pub fn chunks(step: u64, global_cost: f64, costs: &[f64]) -> Vec<CostRecord> {
        if costs.is_empty() {
            return vec![CostRecord { step, global_cost, offset: 0, costs: Vec::new() }];
        }
        costs
            .chunks(COST_CHUNK)
            .enumerate()
            .map(|(i, c)| CostRecord { step, global_cost, offset: (i * COST_CHUNK) as u32, costs: c.to_vec() })
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        assert!(self.costs.len() <= COST_CHUNK, "cost record holds at most {COST_CHUNK} entries");
        let mut out = Vec::with_capacity(23 + 8 * self.costs.len());
        out.push(COST_TAG);
        out.extend_from_slice(&self.step.to_be_bytes());
        out.extend_from_slice(&self.global_cost.to_be_bytes());
        out.extend_from_slice(&self.offset.to_be_bytes());
        out.extend_from_slice(&(self.costs.len() as u16).to_be_bytes());
        for c in &self.costs {
            out.extend_from_slice(&c.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader(bytes);
        r.tag(COST_TAG)?;
        let step = r.u64()?;
        let global_cost = r.f64()?;
        let offset = r.u32()?;
        let n = r.u16()? as usize;
        if n > COST_CHUNK || bytes.len() != 23 + 8 * n {
            return Err(WireError::Length(bytes.len()));
        }
        let costs = (0..n).map(|_| r.f64()).collect::<Result<_, _>>()?;
        r.finish()?;
        Ok(CostRecord { step, global_cost, offset, costs })
    }
}

/// A run of escrow transfers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferBatch(pub Vec<Transfer>);

impl TransferBatch {
    pub fn chunks(transfers: &[Transfer]) -> Vec<TransferBatch> {
        transfers.chunks(TRANSFER_CHUNK).map(|c| TransferBatch(c.to_vec())).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        assert!(self.0.len() <= TRANSFER_CHUNK, "transfer batch holds at most {TRANSFER_CHUNK} entries");
        let mut out = Vec::with_capacity(3 + TRANSFER_RECORD_LEN * self.0.len());
        out.push(TRANSFER_TAG);
        out.extend_from_slice(&(self.0.len() as u16).to_be_bytes());
        for t in &self.0 {
            t.encode(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader(bytes);
        r.tag(TRANSFER_TAG)?;
        let n = r.u16()? as usize;
        if n > TRANSFER_CHUNK || bytes.len() != 3 + TRANSFER_RECORD_LEN * n {
            return Err(WireError::Length(bytes.len()));
        }
        let items = (0..n)
            .map(|_| Transfer::decode(r.take(TRANSFER_RECORD_LEN)?).ok_or(WireError::Field))
            .collect::<Result<_, _>>()?;
        Ok(TransferBatch(items))
    }
}
