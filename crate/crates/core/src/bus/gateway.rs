//! Bridge from bus topics onto ledger channels.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use serde::Serialize;

use super::{Bus, BusError, BusMessage, Subscription};
use crate::ledger::{mam_fetch, mam_publish_in, Ledger, LedgerError, MamChannel, MamMessage, TxId};

const ENVELOPE_VERSION: u8 = 1;

/// What the gateway writes to a channel: the bus message plus its origin,
/// so a restarted gateway can tell which messages already landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub publisher: String,
    pub topic: String,
    pub sequence: u64,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn of(msg: &BusMessage) -> Self {
        Envelope {
            publisher: msg.publisher.to_string(),
            topic: msg.topic.to_string(),
            sequence: msg.sequence,
            payload: msg.payload.to_vec(),
        }
    }

    /// `version u8 | publisher_len u16 | publisher | topic_len u16 | topic | sequence u64 | payload`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.publisher.len() + self.topic.len() + self.payload.len());
        out.push(ENVELOPE_VERSION);
        for s in [&self.publisher, &self.topic] {
            out.extend_from_slice(&(s.len() as u16).to_be_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let (&version, mut rest) = bytes.split_first()?;
        if version != ENVELOPE_VERSION {
            return None;
        }
        let mut string = || -> Option<String> {
            let len = u16::from_be_bytes(rest.get(..2)?.try_into().ok()?) as usize;
            let s = std::str::from_utf8(rest.get(2..2 + len)?).ok()?.to_string();
            rest = &rest[2 + len..];
            Some(s)
        };
        let publisher = string()?;
        let topic = string()?;
        let sequence = u64::from_be_bytes(rest.get(..8)?.try_into().ok()?);
        Some(Envelope { publisher, topic, sequence, payload: rest[8..].to_vec() })
    }

    fn key(&self) -> Key {
        (self.publisher.clone(), self.topic.clone(), self.sequence)
    }
}

/// Where the gateway writes. Implemented for [`Ledger`]; tests substitute
/// failing sinks.
pub trait MamSink {
    fn publish(&mut self, channel: &mut MamChannel, message: &[u8]) -> Result<TxId, LedgerError>;

    /// Publishes `(channel index, message)` pairs in order. The default
    /// goes one at a time and stops at the first error, leaving earlier
    /// messages published; the gateway recovers from partial batches by
    /// re-reading the affected channels.
    fn publish_batch(&mut self, channels: &mut [MamChannel], items: &[(usize, Vec<u8>)]) -> Result<Vec<TxId>, LedgerError> {
        items.iter().map(|(i, m)| self.publish(&mut channels[*i], m)).collect()
    }

    /// Everything already on the channel, in order.
    fn history(&self, channel: &MamChannel) -> Vec<MamMessage>;
    /// Moves the channel's publish position past its existing messages.
    fn resume(&self, channel: &mut MamChannel);
}

impl MamSink for Ledger {
    fn publish(&mut self, channel: &mut MamChannel, message: &[u8]) -> Result<TxId, LedgerError> {
        Ledger::publish(self, channel, message)
    }

    /// One tangle batch: every message approves tips from the same
    /// snapshot, and either all are attached or none.
    fn publish_batch(&mut self, channels: &mut [MamChannel], items: &[(usize, Vec<u8>)]) -> Result<Vec<TxId>, LedgerError> {
        let mut tangle = self.write();
        let mut batch = tangle.batch();
        for (i, m) in items {
            mam_publish_in(&mut batch, &mut channels[*i], m)?;
        }
        batch.commit()
    }

    fn history(&self, channel: &MamChannel) -> Vec<MamMessage> {
        mam_fetch(&self.read(), &channel.address(), channel.mode(), Some(&channel.keys()))
    }

    fn resume(&self, channel: &mut MamChannel) {
        channel.resume(&self.read());
    }
}

/// Maps one exact topic to a channel.
pub struct Route {
    pub topic: String,
    pub channel: MamChannel,
}

impl Route {
    pub fn new(topic: impl Into<String>, channel: MamChannel) -> Self {
        Route { topic: topic.into(), channel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total tries per message, including the first.
    pub max_attempts: u32,
    /// Wait before the second try; doubled each time after.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, backoff: Duration::from_millis(5) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLetter {
    pub envelope: Envelope,
    pub error: String,
}

/// `published = received − unrouted − duplicates − dead_lettered` always
/// holds once the gateway is idle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayCounters {
    /// Messages handed to the gateway, routed or not.
    pub received: u64,
    pub unrouted: u64,
    pub duplicates: u64,
    pub published: u64,
    pub retries: u64,
    pub dead_lettered: u64,
    /// Batches that failed and were redone message by message.
    pub batch_fallbacks: u64,
    /// Lost to overflow of the gateway's own subscription.
    pub bus_dropped: u64,
}

type Key = (String, String, u64);

pub struct Gateway<S: MamSink> {
    sink: S,
    topics: HashMap<String, usize>,
    channels: Vec<MamChannel>,
    seen: HashSet<Key>,
    subscription: Option<Subscription>,
    retry: RetryPolicy,
    counters: GatewayCounters,
    dead_letters: Vec<DeadLetter>,
}

impl<S: MamSink> Gateway<S> {
    /// Builds a gateway that is not attached to a bus; feed it with
    /// [`Gateway::handle`]. Channel positions and the dedup set are
    /// recovered from what `sink` already holds, so constructing a new
    /// gateway over the same ledger is a restart.
    pub fn new(sink: S, routes: Vec<Route>) -> Self {
        let mut g = Gateway {
            sink,
            topics: HashMap::with_capacity(routes.len()),
            channels: Vec::with_capacity(routes.len()),
            seen: HashSet::new(),
            subscription: None,
            retry: RetryPolicy::default(),
            counters: GatewayCounters::default(),
            dead_letters: Vec::new(),
        };
        for Route { topic, channel } in routes {
            g.topics.insert(topic, g.channels.len());
            g.channels.push(channel);
            g.recover(g.channels.len() - 1);
        }
        g
    }

    /// Re-reads one channel from the sink: its publish position and which
    /// messages it already holds.
    fn recover(&mut self, idx: usize) {
        let channel = &mut self.channels[idx];
        for m in self.sink.history(channel) {
            match Envelope::decode(&m.body) {
                Some(env) => {
                    self.seen.insert(env.key());
                }
                None => log::warn!("channel {} index {} is not a gateway envelope", channel.address(), m.index),
            }
        }
        self.sink.resume(channel);
    }

    /// A gateway listening to every topic on `bus`. Unrouted messages are
    /// counted and discarded.
    pub fn attach(bus: &Bus, sink: S, routes: Vec<Route>, capacity: usize) -> Result<Self, BusError> {
        let mut g = Self::new(sink, routes);
        g.subscription = Some(bus.subscribe_with_capacity("#", capacity)?);
        Ok(g)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn sink_mut(&mut self) -> &mut S {
        &mut self.sink
    }

    pub fn channel(&self, topic: &str) -> Option<&MamChannel> {
        self.topics.get(topic).map(|&i| &self.channels[i])
    }

    pub fn counters(&self) -> GatewayCounters {
        let mut c = self.counters;
        c.bus_dropped = self.subscription.as_ref().map_or(0, Subscription::dropped);
        c
    }

    pub fn dead_letters(&self) -> &[DeadLetter] {
        &self.dead_letters
    }

    /// Counts the message and decides whether it needs publishing.
    fn admit(&mut self, msg: &BusMessage) -> Option<(usize, Envelope)> {
        self.counters.received += 1;
        let Some(&idx) = self.topics.get(msg.topic.as_str()) else {
            self.counters.unrouted += 1;
            return None;
        };
        let env = Envelope::of(msg);
        if self.seen.contains(&env.key()) {
            self.counters.duplicates += 1;
            log::debug!("duplicate {}#{} from {}", env.topic, env.sequence, env.publisher);
            return None;
        }
        Some((idx, env))
    }

    fn publish_one(&mut self, idx: usize, env: Envelope) -> Option<TxId> {
        let bytes = env.encode();
        let mut wait = self.retry.backoff;
        let mut attempt = 1;
        loop {
            match self.sink.publish(&mut self.channels[idx], &bytes) {
                Ok(id) => {
                    self.seen.insert(env.key());
                    self.counters.published += 1;
                    return Some(id);
                }
                Err(e) if attempt < self.retry.max_attempts && retryable(&e) => {
                    log::warn!("ledger publish for {} failed (attempt {attempt}): {e}", env.topic);
                    self.counters.retries += 1;
                    attempt += 1;
                    if !wait.is_zero() {
                        thread::sleep(wait);
                    }
                    wait *= 2;
                }
                Err(e) => {
                    log::error!("dead-lettering {}#{} from {}: {e}", env.topic, env.sequence, env.publisher);
                    self.counters.dead_lettered += 1;
                    self.dead_letters.push(DeadLetter { envelope: env, error: e.to_string() });
                    return None;
                }
            }
        }
    }

    /// Bridges one message. Returns the transaction that now holds it:
    /// the new one, or `None` if the message was unrouted, already on the
    /// ledger, or dead-lettered.
    pub fn handle(&mut self, msg: &BusMessage) -> Option<TxId> {
        let (idx, env) = self.admit(msg)?;
        self.publish_one(idx, env)
    }

    /// Bridges a run of messages as one ledger batch. If the batch fails,
    /// the affected channels are re-read and whatever did not land is
    /// published one message at a time with retries.
    pub fn handle_all(&mut self, msgs: &[BusMessage]) -> Vec<TxId> {
        let mut pending: Vec<(usize, Envelope)> = Vec::with_capacity(msgs.len());
        let mut keys = HashSet::new();
        for m in msgs {
            if let Some((idx, env)) = self.admit(m) {
                if keys.insert(env.key()) {
                    pending.push((idx, env));
                } else {
                    self.counters.duplicates += 1;
                }
            }
        }
        if pending.is_empty() {
            return Vec::new();
        }
        let items: Vec<(usize, Vec<u8>)> = pending.iter().map(|(i, e)| (*i, e.encode())).collect();
        match self.sink.publish_batch(&mut self.channels, &items) {
            Ok(ids) => {
                self.counters.published += ids.len() as u64;
                self.seen.extend(pending.iter().map(|(_, e)| e.key()));
                ids
            }
            Err(e) => {
                log::warn!("batch of {} failed ({e}); falling back to single publishes", items.len());
                self.counters.batch_fallbacks += 1;
                let touched: HashSet<usize> = pending.iter().map(|(i, _)| *i).collect();
                for idx in touched {
                    self.recover(idx);
                }
                let mut ids = Vec::new();
                for (idx, env) in pending {
                    if self.seen.contains(&env.key()) {
                        // Landed before the batch failed.
                        self.counters.published += 1;
                    } else if let Some(id) = self.publish_one(idx, env) {
                        ids.push(id);
                    }
                }
                ids
            }
        }
    }

    /// Handles everything waiting on the attached subscription as one batch.
    pub fn pump(&mut self) -> Vec<TxId> {
        let msgs = match &self.subscription {
            Some(sub) => sub.drain(),
            None => return Vec::new(),
        };
        self.handle_all(&msgs)
    }

    /// Pumps until `stop` is set, waiting up to `poll` for each message.
    pub fn run(&mut self, stop: &AtomicBool, poll: Duration) {
        while !stop.load(Ordering::Acquire) {
            let msg = match &self.subscription {
                Some(sub) => sub.recv_timeout(poll),
                None => return,
            };
            if let Some(m) = msg {
                self.handle(&m);
            }
        }
        self.pump();
    }

    pub fn into_sink(self) -> S {
        self.sink
    }
}

fn retryable(e: &LedgerError) -> bool {
    !matches!(e, LedgerError::PayloadTooLarge { .. })
}

/// Publishes for one device. While the bus is closed, messages wait in a
/// bounded outbox and the oldest are dropped when it fills.
pub struct StatusPublisher {
    bus: Bus,
    id: String,
    outbox: VecDeque<(String, Vec<u8>)>,
    capacity: usize,
    dropped: u64,
}

impl StatusPublisher {
    pub fn new(bus: &Bus, id: impl Into<String>, capacity: usize) -> Self {
        StatusPublisher { bus: bus.clone(), id: id.into(), outbox: VecDeque::new(), capacity: capacity.max(1), dropped: 0 }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pending(&self) -> usize {
        self.outbox.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Sends `payload`, after anything still queued. Returns the bus
    /// sequence number, or `None` if the message was queued.
    pub fn send(&mut self, topic: &str, payload: &[u8]) -> Result<Option<u64>, BusError> {
        super::Topic::new(topic)?;
        if payload.len() > super::MAX_PAYLOAD {
            return Err(BusError::Oversize(payload.len()));
        }
        self.flush();
        if self.outbox.is_empty() {
            match self.bus.publish(&self.id, topic, payload) {
                Ok(seq) => return Ok(Some(seq)),
                Err(BusError::Closed) => {}
                Err(e) => return Err(e),
            }
        }
        if self.outbox.len() == self.capacity {
            self.outbox.pop_front();
            self.dropped += 1;
            log::warn!("{}: outbox full, dropped oldest message", self.id);
        }
        self.outbox.push_back((topic.to_string(), payload.to_vec()));
        Ok(None)
    }

    /// Sends queued messages in order until the bus refuses one.
    pub fn flush(&mut self) -> usize {
        let mut sent = 0;
        while let Some((topic, payload)) = self.outbox.front() {
            if self.bus.publish(&self.id, topic, payload).is_err() {
                break;
            }
            self.outbox.pop_front();
            sent += 1;
        }
        sent
    }
}
