use std::collections::VecDeque;
use std::sync::Arc;

use crate::wire::{encode_wire, ControlKey, WireMessage};

/// One validated message, encoded once and shared by every subscriber queue
/// it is routed to.
#[derive(Debug)]
pub struct Routed {
    pub key: ControlKey,
    pub text: Arc<str>,
}

impl Routed {
    pub fn new(msg: &WireMessage) -> Arc<Self> {
        Arc::new(Routed {
            key: msg.key(),
            text: encode_wire(msg).into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Queued,
    /// The queue was full and its oldest entry was discarded.
    DroppedOldest,
    /// A pending entry for the same control was replaced.
    Coalesced,
}

/// Bounded outgoing buffer with drop-oldest overflow and optional
/// latest-value-wins coalescing per [`ControlKey`].
///
/// A coalesced update is removed from its old position and appended, so the
/// delivered sequence stays a subsequence of the published one.
#[derive(Debug)]
pub struct OutboundQueue {
    capacity: usize,
    coalesce: bool,
    items: VecDeque<Arc<Routed>>,
}

impl OutboundQueue {
    pub fn new(capacity: usize, coalesce: bool) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        OutboundQueue {
            capacity,
            coalesce,
            items: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn push(&mut self, item: Arc<Routed>) -> PushOutcome {
        if self.coalesce {
            if let Some(pos) = self.items.iter().position(|q| q.key == item.key) {
                self.items.remove(pos);
                self.items.push_back(item);
                return PushOutcome::Coalesced;
            }
        }
        if self.items.len() >= self.capacity {
            self.items.pop_front();
            self.items.push_back(item);
            return PushOutcome::DroppedOldest;
        }
        self.items.push_back(item);
        PushOutcome::Queued
    }

    pub fn pop(&mut self) -> Option<Arc<Routed>> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn coalesce(&self) -> bool {
        self.coalesce
    }

    /// Empties the queue, returning how many entries were discarded.
    pub fn clear(&mut self) -> usize {
        let n = self.items.len();
        self.items.clear();
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi14::{Channel, Value14};
    use crate::wire::build_message;

    fn routed(x: u8, value: u16) -> Arc<Routed> {
        let msg =
            build_message(x, 6, Value14::new(value).unwrap(), Channel::default(), "t").unwrap();
        Routed::new(&msg)
    }

    fn drain(q: &mut OutboundQueue) -> Vec<Arc<Routed>> {
        std::iter::from_fn(|| q.pop()).collect()
    }

    #[test]
    fn fifo_under_capacity() {
        let mut q = OutboundQueue::new(4, false);
        for v in 0..4 {
            assert_eq!(q.push(routed(1, v)), PushOutcome::Queued);
        }
        let texts: Vec<_> = drain(&mut q).iter().map(|r| r.text.clone()).collect();
        let expected: Vec<Arc<str>> = (0..4).map(|v| routed(1, v).text.clone()).collect();
        assert_eq!(texts, expected);
    }

    #[test]
    fn overflow_drops_oldest() {
        let mut q = OutboundQueue::new(2, false);
        q.push(routed(1, 1));
        q.push(routed(1, 2));
        assert_eq!(q.push(routed(1, 3)), PushOutcome::DroppedOldest);
        assert_eq!(q.len(), 2);
        let left: Vec<_> = drain(&mut q).iter().map(|r| r.text.clone()).collect();
        assert_eq!(left, vec![routed(1, 2).text.clone(), routed(1, 3).text.clone()]);
    }

    #[test]
    fn coalesce_keeps_one_per_key_in_order() {
        let mut q = OutboundQueue::new(8, true);
        q.push(routed(1, 10));
        q.push(routed(2, 20));
        assert_eq!(q.push(routed(1, 11)), PushOutcome::Coalesced);
        assert_eq!(q.len(), 2);
        let left: Vec<_> = drain(&mut q).iter().map(|r| r.text.clone()).collect();
        assert_eq!(left, vec![routed(2, 20).text.clone(), routed(1, 11).text.clone()]);
    }

    #[test]
    fn coalesce_still_bounded() {
        let mut q = OutboundQueue::new(2, true);
        q.push(routed(1, 0));
        q.push(routed(2, 0));
        assert_eq!(q.push(routed(3, 0)), PushOutcome::DroppedOldest);
        assert_eq!(q.len(), 2);
    }
}
