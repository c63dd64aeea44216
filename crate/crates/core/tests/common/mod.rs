#![allow(dead_code)]

use std::io::{self, Write};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use midiwire::client::{Connection, Incoming};
use midiwire::midi14::{parse_hex, NrpnReceiver};
use midiwire::relay::RelayHandle;
use midiwire::wire::{Topic, WireMessage};

/// A cloneable in-memory writer.
#[derive(Clone, Default)]
pub struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl SharedBuf {
    pub fn text(&self) -> String {
        String::from_utf8(self.0.lock().unwrap().clone()).unwrap()
    }

    pub fn line_count(&self) -> usize {
        self.text().lines().count()
    }
}

pub fn topic(name: &str) -> Topic {
    Topic::new(name).unwrap()
}

/// Polls `cond` every 5 ms until it holds or `limit` passes.
pub async fn wait_until(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + limit;
    while Instant::now() < deadline {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    cond()
}

pub async fn wait_for_subscribers(relay: &RelayHandle, topic: &str, n: usize) {
    let ok = wait_until(Duration::from_secs(5), || relay.stats().subscribers(topic) == n).await;
    assert!(ok, "expected {n} subscribers on {topic}, stats: {:?}", relay.stats());
}

/// Reads data frames until `n` have arrived or `limit` passes.
pub async fn collect(conn: &mut Connection, n: usize, limit: Duration) -> Vec<WireMessage> {
    let mut out = Vec::with_capacity(n);
    let deadline = tokio::time::Instant::now() + limit;
    while out.len() < n {
        match tokio::time::timeout_at(deadline, conn.next()).await {
            Ok(Some(Ok(Incoming::Message(m)))) => out.push(m),
            Ok(Some(Ok(Incoming::Invalid { .. }))) => panic!("relay forwarded an invalid frame"),
            Ok(Some(Err(e))) => panic!("subscriber error: {e}"),
            Ok(None) | Err(_) => break,
        }
    }
    out
}

/// Decodes a hex-dump transcript into the values of its complete events.
pub fn decode_hex_transcript(text: &str) -> Vec<u16> {
    let mut rx = NrpnReceiver::new();
    let mut values = Vec::new();
    for line in text.lines() {
        let bytes = parse_hex(line).expect("hex line");
        assert_eq!(bytes.len(), 12, "line is not one NRPN group: {line}");
        values.extend(
            rx.feed_all(&bytes)
                .into_iter()
                .filter(|e| e.complete)
                .map(|e| e.value.get()),
        );
    }
    values
}

/// True when `sub` appears in `seq` in order.
pub fn is_subsequence<T: PartialEq>(sub: &[T], seq: &[T]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}
