//! Subscriber side: turns relayed control updates into NRPN bytes and
//! control-voltage records.

pub mod config;
pub mod curve;
pub mod sink;

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

pub use config::{ConfigError, CvTarget, RouteDefaults, RouteRule, RouteTable};
pub use curve::{map_to_cv, CurveShape, CurveSpec};
pub use sink::{FileSink, HexSink, MidiSink, PortSink, SinkSpec};

use crate::client::{Backoff, ClientError, Connection, Incoming};
use crate::midi14::encode_nrpn;
use crate::wire::{decode_wire, ControlKey, Topic, WireMessage};

/// Reopen attempts after a failed sink write before the group is dropped.
pub const SINK_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("no topics to subscribe to")]
    NoTopics,
    #[error("rule {rule} refers to sink {sink}, but only {available} sinks exist")]
    MissingSink {
        rule: usize,
        sink: usize,
        available: usize,
    },
    #[error("cannot open {what}: {source}")]
    Open {
        what: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeStats {
    pub received: u64,
    pub invalid: u64,
    pub unmatched: u64,
    pub nrpn_groups: u64,
    pub cv_records: u64,
    /// Messages whose parameter pair is the null NRPN parameter.
    pub nrpn_rejected: u64,
    pub sink_errors: u64,
    /// Groups or records lost while a sink or the CV output was down.
    pub dropped: u64,
    pub rule_conflicts: u64,
    pub connects: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    Routed { rule: usize },
    Unmatched,
    Invalid,
}

/// Routes messages through first-match rules to sinks and the CV stream.
///
/// Processing is strictly sequential: each message is fully written before
/// the next is looked at.
pub struct Bridge {
    rules: Vec<RouteRule>,
    sinks: Vec<Box<dyn MidiSink>>,
    cv_out: Option<Box<dyn Write + Send>>,
    started: Instant,
    stats: BridgeStats,
    warned: HashSet<ControlKey>,
}

impl Bridge {
    pub fn new(
        rules: Vec<RouteRule>,
        sinks: Vec<Box<dyn MidiSink>>,
        cv_out: Option<Box<dyn Write + Send>>,
    ) -> Result<Self, BridgeError> {
        for (i, rule) in rules.iter().enumerate() {
            if rule.emit_nrpn && rule.sink >= sinks.len() {
                return Err(BridgeError::MissingSink {
                    rule: i,
                    sink: rule.sink,
                    available: sinks.len(),
                });
            }
        }
        Ok(Bridge {
            rules,
            sinks,
            cv_out,
            started: Instant::now(),
            stats: BridgeStats::default(),
            warned: HashSet::new(),
        })
    }

    /// Opens every sink and the CV output named by `table`.
    pub fn open(table: &RouteTable) -> Result<Self, BridgeError> {
        let mut sinks = Vec::with_capacity(table.sinks.len());
        for (name, spec) in &table.sinks {
            let sink = spec.open().map_err(|source| BridgeError::Open {
                what: format!("sink {name} ({spec})"),
                source,
            })?;
            sinks.push(sink);
        }
        let cv_out: Option<Box<dyn Write + Send>> = match &table.cv_out {
            None => None,
            Some(CvTarget::Stdout) => Some(Box::new(io::stdout())),
            Some(CvTarget::File(path)) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| BridgeError::Open {
                        what: format!("cv output {}", path.display()),
                        source,
                    })?;
                Some(Box::new(file))
            }
        };
        Bridge::new(table.rules.clone(), sinks, cv_out)
    }

    pub fn stats(&self) -> BridgeStats {
        self.stats
    }

    pub fn rules(&self) -> &[RouteRule] {
        &self.rules
    }

    /// Decodes and dispatches one text frame.
    pub fn on_text(&mut self, text: &str) -> Dispatch {
        match decode_wire(text) {
            Ok(msg) => self.on_message(&msg),
            Err(e) => {
                debug!("skipping invalid frame: {e}");
                self.record_invalid();
                Dispatch::Invalid
            }
        }
    }

    pub fn record_invalid(&mut self) {
        self.stats.invalid += 1;
    }

    pub fn on_message(&mut self, msg: &WireMessage) -> Dispatch {
        self.stats.received += 1;
        let mut matching = self
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.matches(msg))
            .map(|(i, _)| i);
        let Some(index) = matching.next() else {
            self.stats.unmatched += 1;
            return Dispatch::Unmatched;
        };
        if let Some(other) = matching.next() {
            self.stats.rule_conflicts += 1;
            if self.warned.insert(msg.key()) {
                warn!(
                    "{}/{}/{}.{} matches rules {index} and {other}; using rule {index}",
                    msg.event, msg.channel, msg.msbx, msg.msby
                );
            }
        }
        let rule = self.rules[index].clone();
        let value = msg.value();

        if rule.emit_nrpn {
            let param = rule.nrpn_param.unwrap_or_else(|| msg.param());
            match encode_nrpn(param, value, msg.channel) {
                Ok(group) => self.write_group(rule.sink, &group),
                Err(e) => {
                    debug!("not emitting NRPN: {e}");
                    self.stats.nrpn_rejected += 1;
                }
            }
        }
        if rule.emit_cv {
            let cv = map_to_cv(value, &rule.curve);
            let line = format!(
                "{} {}/{}/{}.{} {:.6}\n",
                self.started.elapsed().as_millis(),
                msg.event,
                msg.channel,
                msg.msbx,
                msg.msby,
                cv
            );
            self.write_cv(&line);
        }
        Dispatch::Routed { rule: index }
    }

    fn write_group(&mut self, index: usize, group: &[u8]) {
        let sink = &mut self.sinks[index];
        if sink.write_group(group).is_ok() {
            self.stats.nrpn_groups += 1;
            return;
        }
        self.stats.sink_errors += 1;
        for attempt in 1..=SINK_RETRIES {
            match sink.reopen().and_then(|()| sink.write_group(group)) {
                Ok(()) => {
                    info!("{} recovered after {attempt} attempt(s)", sink.describe());
                    self.stats.nrpn_groups += 1;
                    return;
                }
                Err(e) => debug!("{} retry {attempt}: {e}", sink.describe()),
            }
        }
        warn!("{} unavailable, dropping group", sink.describe());
        self.stats.dropped += 1;
    }

    fn write_cv(&mut self, line: &str) {
        let Some(out) = self.cv_out.as_mut() else {
            self.stats.dropped += 1;
            return;
        };
        match out.write_all(line.as_bytes()).and_then(|()| out.flush()) {
            Ok(()) => self.stats.cv_records += 1,
            Err(e) => {
                warn!("cv output failed: {e}");
                self.stats.sink_errors += 1;
                self.stats.dropped += 1;
            }
        }
    }
}

/// Connection settings for [`run_bridge`].
#[derive(Debug, Clone)]
pub struct BridgeClient {
    pub url: String,
    pub topics: Vec<Topic>,
    pub token: Option<String>,
    pub coalesce: Option<bool>,
    pub backoff: Backoff,
}

impl BridgeClient {
    pub fn new(url: impl Into<String>, topics: Vec<Topic>) -> Self {
        BridgeClient {
            url: url.into(),
            topics,
            token: None,
            coalesce: None,
            backoff: Backoff::default(),
        }
    }
}

/// Subscribes to the relay and feeds `bridge` until `shutdown` fires,
/// reconnecting with exponential backoff whenever the connection drops.
pub async fn run_bridge(
    client: &BridgeClient,
    bridge: &mut Bridge,
    shutdown: CancellationToken,
) -> Result<BridgeStats, BridgeError> {
    if client.topics.is_empty() {
        return Err(BridgeError::NoTopics);
    }
    let mut attempt = 0u32;
    loop {
        let connected = tokio::select! {
            _ = shutdown.cancelled() => break,
            c = Connection::subscriber(&client.url, &client.topics, client.coalesce, client.token.clone()) => c,
        };
        match connected {
            Ok(mut conn) => {
                attempt = 0;
                bridge.stats.connects += 1;
                info!("bridge subscribed to {} as session {}", client.url, conn.welcome().session);
                if pump(&mut conn, bridge, &shutdown).await {
                    let _ = conn.close().await;
                    break;
                }
                warn!("lost connection to {}", client.url);
            }
            Err(e) => warn!("connect attempt {} to {} failed: {e}", attempt + 1, client.url),
        }
        let delay = client.backoff.delay(attempt);
        attempt = attempt.saturating_add(1);
        tokio::select! {
            _ = shutdown.cancelled() => break,
            _ = tokio::time::sleep(delay) => {}
        }
    }
    Ok(bridge.stats())
}

/// Returns `true` when stopped by shutdown, `false` on disconnect.
async fn pump(conn: &mut Connection, bridge: &mut Bridge, shutdown: &CancellationToken) -> bool {
    loop {
        let frame = tokio::select! {
            _ = shutdown.cancelled() => return true,
            frame = conn.next() => frame,
        };
        match frame {
            None => return false,
            Some(Err(ClientError::Ws(e))) => {
                debug!("websocket error: {e}");
                return false;
            }
            Some(Err(e)) => {
                debug!("connection error: {e}");
                return false;
            }
            Some(Ok(Incoming::Message(msg))) => {
                bridge.on_message(&msg);
            }
            Some(Ok(Incoming::Invalid { error, .. })) => {
                debug!("skipping invalid frame: {error}");
                bridge.record_invalid();
            }
        }
    }
}
