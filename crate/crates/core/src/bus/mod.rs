//! In-process publish/subscribe with MQTT-style topics.
//!
//! Topics are `/`-separated paths. Subscription filters may use `+` for
//! exactly one segment and a trailing `#` for any remainder. Nothing is
//! retained: a subscriber sees only what is published after it subscribes.

mod gateway;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

pub use gateway::{DeadLetter, Envelope, Gateway, GatewayCounters, MamSink, RetryPolicy, Route, StatusPublisher};

pub const MAX_PAYLOAD: usize = 64 * 1024;
pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("bus is closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(Arc<str>);

impl Topic {
    pub fn new(name: &str) -> Result<Self, BusError> {
        let bad = name.is_empty() || name.split('/').any(|s| s.is_empty() || s.contains(['+', '#']));
        if bad {
            return Err(BusError::InvalidTopic(name.to_string()));
        }
        Ok(Topic(name.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn validate_filter(filter: &str) -> Result<(), BusError> {
    let segs: Vec<&str> = filter.split('/').collect();
    let ok = !filter.is_empty()
        && segs.iter().enumerate().all(|(i, s)| match *s {
            "" => false,
            "+" => true,
            "#" => i == segs.len() - 1,
            s => !s.contains(['+', '#']),
        });
    if ok {
        Ok(())
    } else {
        Err(BusError::InvalidFilter(filter.to_string()))
    }
}

/// Whether `topic` matches `filter`.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub topic: Topic,
    pub payload: Arc<[u8]>,
    pub publisher: Arc<str>,
    /// Starts at 1 for each (publisher, topic).
    pub sequence: u64,
}

struct Queue {
    filter: String,
    capacity: usize,
    items: Mutex<VecDeque<BusMessage>>,
    ready: Condvar,
    dropped: AtomicU64,
}

#[derive(Default)]
struct Inner {
    subscribers: Vec<Weak<Queue>>,
    sequences: HashMap<(Arc<str>, Topic), u64>,
}

/// Cheap to clone; all clones share one bus.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Mutex<Inner>>,
    closed: Arc<AtomicBool>,
    capacity: usize,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl Bus {
    /// `capacity` bounds each subscription's queue.
    pub fn new(capacity: usize) -> Self {
        Bus { inner: Arc::default(), closed: Arc::default(), capacity: capacity.max(1) }
    }

    /// Delivers to every matching subscriber and returns the message's
    /// sequence number. Sequencing and delivery happen under one lock, so
    /// each (publisher, topic) stream arrives in order everywhere.
    pub fn publish(&self, publisher: &str, topic: &str, payload: &[u8]) -> Result<u64, BusError> {
        let topic = Topic::new(topic)?;
        if payload.len() > MAX_PAYLOAD {
            return Err(BusError::Oversize(payload.len()));
        }
        if self.is_closed() {
            return Err(BusError::Closed);
        }
        let publisher: Arc<str> = publisher.into();
        let mut inner = self.inner.lock();
        let seq = inner.sequences.entry((publisher.clone(), topic.clone())).or_insert(0);
        *seq += 1;
        let msg = BusMessage { topic, payload: payload.into(), publisher, sequence: *seq };
        inner.subscribers.retain(|w| w.strong_count() > 0);
        for q in inner.subscribers.iter().filter_map(Weak::upgrade) {
            if topic_matches(&q.filter, msg.topic.as_str()) {
                let mut items = q.items.lock();
                if items.len() == q.capacity {
                    items.pop_front();
                    q.dropped.fetch_add(1, Ordering::Relaxed);
                    log::warn!("subscription {:?} full, dropped oldest message", q.filter);
                }
                items.push_back(msg.clone());
                q.ready.notify_one();
            }
        }
        Ok(msg.sequence)
    }

    pub fn subscribe(&self, filter: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_capacity(filter, self.capacity)
    }

    pub fn subscribe_with_capacity(&self, filter: &str, capacity: usize) -> Result<Subscription, BusError> {
        validate_filter(filter)?;
        let q = Arc::new(Queue {
            filter: filter.to_string(),
            capacity: capacity.max(1),
            items: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
        });
        self.inner.lock().subscribers.push(Arc::downgrade(&q));
        Ok(Subscription { queue: q })
    }

    /// Live subscriptions. Dropped handles are not counted.
    pub fn subscriber_count(&self) -> usize {
        let mut inner = self.inner.lock();
        inner.subscribers.retain(|w| w.strong_count() > 0);
        inner.subscribers.len()
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }

    pub fn reopen(&self) {
        self.closed.store(false, Ordering::SeqCst);
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}

/// A subscriber's queue. Dropping it unsubscribes.
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn filter(&self) -> &str {
        &self.queue.filter
    }

    pub fn try_recv(&self) -> Option<BusMessage> {
        self.queue.items.lock().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        let mut items = self.queue.items.lock();
        if items.is_empty() {
            self.queue.ready.wait_for(&mut items, timeout);
        }
        items.pop_front()
    }

    pub fn drain(&self) -> Vec<BusMessage> {
        self.queue.items.lock().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.items.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages discarded because this queue was full.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_and_filter_validation() {
        assert!(Topic::new("mask/1/status").is_ok());
        for bad in ["", "/a", "a/", "a//b", "a/+/b", "a/#"] {
            assert!(Topic::new(bad).is_err(), "{bad}");
        }
        for ok in ["a", "a/+/c", "#", "a/#", "+/+"] {
            assert!(validate_filter(ok).is_ok(), "{ok}");
        }
        for bad in ["", "a/#/b", "a/b+", "a//b"] {
            assert!(validate_filter(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn wildcard_matching() {
        assert!(topic_matches("mask/+/status", "mask/7/status"));
        assert!(!topic_matches("mask/+/status", "mask/7/other"));
        assert!(!topic_matches("mask/+", "mask/7/status"));
        assert!(topic_matches("mask/#", "mask/7/status"));
        assert!(topic_matches("#", "controller/costs"));
        assert!(topic_matches("a/b", "a/b"));
        assert!(!topic_matches("a/b", "a/b/c"));
    }

    #[test]
    fn no_subscribers_is_fine() {
        let bus = Bus::default();
        assert_eq!(bus.publish("p", "a/b", b"x").unwrap(), 1);
    }

    #[test]
    fn fifo_and_fan_out() {
        let bus = Bus::default();
        let s1 = bus.subscribe("a/#").unwrap();
        let s2 = bus.subscribe("a/b").unwrap();
        for i in 1..=3u8 {
            bus.publish("p", "a/b", &[i]).unwrap();
        }
        for s in [&s1, &s2] {
            let got: Vec<(u64, u8)> = s.drain().iter().map(|m| (m.sequence, m.payload[0])).collect();
            assert_eq!(got, vec![(1, 1), (2, 2), (3, 3)]);
        }
    }

    #[test]
    fn late_subscriber_misses_earlier_messages() {
        let bus = Bus::default();
        bus.publish("p", "t", b"early").unwrap();
        let s = bus.subscribe("t").unwrap();
        assert!(s.try_recv().is_none());
    }

    #[test]
    fn dropped_handle_unsubscribes() {
        let bus = Bus::default();
        let s = bus.subscribe("t").unwrap();
        assert_eq!(bus.subscriber_count(), 1);
        drop(s);
        bus.publish("p", "t", b"x").unwrap();
        assert_eq!(bus.subscriber_count(), 0);
    }

    #[test]
    fn overflow_drops_oldest() {
        let bus = Bus::default();
        let s = bus.subscribe_with_capacity("t", 4).unwrap();
        for i in 1..=6u8 {
            bus.publish("p", "t", &[i]).unwrap();
        }
        assert_eq!(s.dropped(), 2);
        assert_eq!(s.drain().iter().map(|m| m.payload[0]).collect::<Vec<_>>(), vec![3, 4, 5, 6]);
    }

    #[test]
    fn limits_and_closing() {
        let bus = Bus::default();
        assert_eq!(bus.publish("p", "t", &vec![0; MAX_PAYLOAD + 1]), Err(BusError::Oversize(MAX_PAYLOAD + 1)));
        assert!(bus.publish("p", "t", &vec![0; MAX_PAYLOAD]).is_ok());
        bus.close();
        assert_eq!(bus.publish("p", "t", b"x"), Err(BusError::Closed));
        bus.reopen();
        assert_eq!(bus.publish("p", "t", b"x"), Ok(2));
    }

    #[test]
    fn sequences_are_per_publisher_and_topic() {
        let bus = Bus::default();
        assert_eq!(bus.publish("a", "t", b"").unwrap(), 1);
        assert_eq!(bus.publish("a", "u", b"").unwrap(), 1);
        assert_eq!(bus.publish("b", "t", b"").unwrap(), 1);
        assert_eq!(bus.publish("a", "t", b"").unwrap(), 2);
    }
}
