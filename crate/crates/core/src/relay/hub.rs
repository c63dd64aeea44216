//! Topic registry and fan-out, independent of any socket.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use tokio::sync::Notify;

use super::protocol::Mode;
use super::queue::{OutboundQueue, PushOutcome, Routed};
use crate::wire::{Topic, WireMessage};

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Default)]
struct Counters {
    connections: AtomicU64,
    connections_total: AtomicU64,
    published: AtomicU64,
    routed: AtomicU64,
    dropped: AtomicU64,
    coalesced: AtomicU64,
    unrouted: AtomicU64,
    invalid: AtomicU64,
}

/// Point-in-time copy of the relay counters.
///
/// `routed` counts frames handed to subscriber connections, `dropped` counts
/// queue overflow plus frames still queued when a subscriber left, and
/// `unrouted` counts publishes to topics without subscribers. Once all
/// queues are drained, `published * subscribers == routed + dropped +
/// coalesced` holds per topic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub connections: u64,
    pub connections_total: u64,
    pub published: u64,
    pub routed: u64,
    pub dropped: u64,
    pub coalesced: u64,
    pub unrouted: u64,
    pub invalid: u64,
    pub topics: BTreeMap<String, usize>,
}

impl StatsSnapshot {
    /// One `name value` line per counter.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in [
            ("connections", self.connections),
            ("connections_total", self.connections_total),
            ("published", self.published),
            ("routed", self.routed),
            ("dropped", self.dropped),
            ("coalesced", self.coalesced),
            ("unrouted", self.unrouted),
            ("invalid", self.invalid),
        ] {
            let _ = writeln!(out, "{name} {value}");
        }
        for (topic, subs) in &self.topics {
            let _ = writeln!(out, "subscribers.{topic} {subs}");
        }
        out
    }

    pub fn subscribers(&self, topic: &str) -> usize {
        self.topics.get(topic).copied().unwrap_or(0)
    }
}

/// One connected client as seen by the hub.
#[derive(Debug)]
pub struct Session {
    id: u64,
    mode: Mode,
    topics: Vec<Topic>,
    queue: Mutex<OutboundQueue>,
    notify: Notify,
    closed: AtomicBool,
    counters: Arc<Counters>,
}

impl Session {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn coalesce(&self) -> bool {
        self.queue.lock().unwrap().coalesce()
    }

    pub fn pending(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    fn push(&self, item: Arc<Routed>) -> PushOutcome {
        let outcome = self.queue.lock().unwrap().push(item);
        self.notify.notify_one();
        outcome
    }

    /// Takes the next queued frame without waiting.
    pub fn try_next(&self) -> Option<Arc<Routed>> {
        let item = self.queue.lock().unwrap().pop();
        if item.is_some() {
            self.counters.routed.fetch_add(1, Ordering::Relaxed);
        }
        item
    }

    /// Waits for the next queued frame; `None` once the session is closed.
    pub async fn next(&self) -> Option<Arc<Routed>> {
        loop {
            if let Some(item) = self.try_next() {
                return Some(item);
            }
            if self.closed.load(Ordering::Acquire) {
                return None;
            }
            self.notify.notified().await;
        }
    }

    fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.notify.notify_one();
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HubConfig {
    pub queue_capacity: usize,
    /// Coalescing mode for clients whose hello does not choose one.
    pub coalesce: bool,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            coalesce: false,
        }
    }
}

/// Routes published messages to per-subscriber queues.
///
/// Fan-out takes a shared read lock on the topic table and each subscriber's
/// own queue lock in turn; subscribers never contend with each other.
#[derive(Debug)]
pub struct Hub {
    config: HubConfig,
    topics: RwLock<HashMap<Topic, Vec<Arc<Session>>>>,
    counters: Arc<Counters>,
    next_id: AtomicU64,
}

impl Default for Hub {
    fn default() -> Self {
        Hub::new(HubConfig::default())
    }
}

impl Hub {
    pub fn new(config: HubConfig) -> Self {
        Hub {
            config,
            topics: RwLock::new(HashMap::new()),
            counters: Arc::default(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> HubConfig {
        self.config
    }

    /// Creates a session and, for subscribing modes, adds it to each topic.
    pub fn register(&self, mode: Mode, topics: Vec<Topic>, coalesce: Option<bool>) -> Arc<Session> {
        let session = Arc::new(Session {
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            mode,
            topics,
            queue: Mutex::new(OutboundQueue::new(
                self.config.queue_capacity,
                coalesce.unwrap_or(self.config.coalesce),
            )),
            notify: Notify::new(),
            closed: AtomicBool::new(false),
            counters: self.counters.clone(),
        });
        if mode.subscribes() {
            let mut table = self.topics.write().unwrap();
            for topic in &session.topics {
                table.entry(topic.clone()).or_default().push(session.clone());
            }
        }
        self.counters.connections.fetch_add(1, Ordering::Relaxed);
        self.counters
            .connections_total
            .fetch_add(1, Ordering::Relaxed);
        session
    }

    /// Removes a session; anything still queued for it counts as dropped.
    pub fn unregister(&self, session: &Session) {
        if session.mode.subscribes() {
            let mut table = self.topics.write().unwrap();
            for topic in &session.topics {
                if let Some(list) = table.get_mut(topic) {
                    list.retain(|s| s.id != session.id);
                    if list.is_empty() {
                        table.remove(topic);
                    }
                }
            }
        }
        let left = session.queue.lock().unwrap().clear();
        self.counters
            .dropped
            .fetch_add(left as u64, Ordering::Relaxed);
        self.counters.connections.fetch_sub(1, Ordering::Relaxed);
        session.close();
    }

    /// Enqueues `msg` for every subscriber of its topic and returns how many
    /// subscribers it was routed to.
    pub fn publish(&self, msg: &WireMessage) -> usize {
        self.counters.published.fetch_add(1, Ordering::Relaxed);
        let table = self.topics.read().unwrap();
        let Some(subscribers) = table.get(&msg.event) else {
            self.counters.unrouted.fetch_add(1, Ordering::Relaxed);
            return 0;
        };
        let routed = Routed::new(msg);
        for session in subscribers {
            match session.push(routed.clone()) {
                PushOutcome::Queued => {}
                PushOutcome::DroppedOldest => {
                    self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                }
                PushOutcome::Coalesced => {
                    self.counters.coalesced.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        subscribers.len()
    }

    /// Records a frame that failed validation.
    pub fn record_invalid(&self) {
        self.counters.invalid.fetch_add(1, Ordering::Relaxed);
    }

    pub fn stats(&self) -> StatsSnapshot {
        let c = &self.counters;
        let topics = self
            .topics
            .read()
            .unwrap()
            .iter()
            .map(|(t, subs)| (t.to_string(), subs.len()))
            .collect();
        StatsSnapshot {
            connections: c.connections.load(Ordering::Relaxed),
            connections_total: c.connections_total.load(Ordering::Relaxed),
            published: c.published.load(Ordering::Relaxed),
            routed: c.routed.load(Ordering::Relaxed),
            dropped: c.dropped.load(Ordering::Relaxed),
            coalesced: c.coalesced.load(Ordering::Relaxed),
            unrouted: c.unrouted.load(Ordering::Relaxed),
            invalid: c.invalid.load(Ordering::Relaxed),
            topics,
        }
    }
}
