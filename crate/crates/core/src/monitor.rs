//! Human-readable live dump of relayed traffic.

use std::io::{self, Write};
use std::time::Instant;

use tokio_util::sync::CancellationToken;
use tracing::warn;

use crate::bridge::{map_to_cv, CurveSpec};
use crate::client::{ClientError, Connection, Incoming};
use crate::wire::{Topic, WireError, WireMessage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MonitorStats {
    pub printed: u64,
    pub skipped: u64,
}

/// Formats messages as
/// `<ms> topic=<t> ch=<c> param=(<x>,<y>) value=<v> cv=<f>`.
#[derive(Debug)]
pub struct Monitor {
    started: Instant,
    curve: CurveSpec,
    stats: MonitorStats,
}

impl Default for Monitor {
    fn default() -> Self {
        Monitor::new(CurveSpec::default())
    }
}

impl Monitor {
    pub fn new(curve: CurveSpec) -> Self {
        Monitor {
            started: Instant::now(),
            curve,
            stats: MonitorStats::default(),
        }
    }

    pub fn stats(&self) -> MonitorStats {
        self.stats
    }

    pub fn line(&mut self, msg: &WireMessage) -> String {
        self.stats.printed += 1;
        let value = msg.value();
        format!(
            "{} topic={} ch={} param=({},{}) value={} cv={:.6}",
            self.started.elapsed().as_millis(),
            msg.event,
            msg.channel,
            msg.msbx,
            msg.msby,
            value,
            map_to_cv(value, &self.curve)
        )
    }

    pub fn skip(&mut self, error: &WireError) {
        self.stats.skipped += 1;
        warn!("skipped malformed frame ({} so far): {error}", self.stats.skipped);
    }

    /// Handles one raw text frame.
    pub fn on_text(&mut self, text: &str) -> Option<String> {
        match crate::wire::decode_wire(text) {
            Ok(msg) => Some(self.line(&msg)),
            Err(e) => {
                self.skip(&e);
                None
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("cannot write output: {0}")]
    Output(#[from] io::Error),
}

/// Subscribes and prints one line per message until `shutdown` fires or the
/// relay closes the connection.
pub async fn run_monitor(
    url: &str,
    topics: &[Topic],
    token: Option<String>,
    monitor: &mut Monitor,
    out: &mut (dyn Write + Send),
    shutdown: CancellationToken,
) -> Result<MonitorStats, MonitorError> {
    let mut conn = Connection::subscriber(url, topics, None, token).await?;
    loop {
        let frame = tokio::select! {
            _ = shutdown.cancelled() => {
                let _ = conn.close().await;
                break;
            }
            frame = conn.next() => frame,
        };
        match frame {
            None => break,
            Some(Err(e)) => return Err(e.into()),
            Some(Ok(Incoming::Message(msg))) => {
                writeln!(out, "{}", monitor.line(&msg))?;
                out.flush()?;
            }
            Some(Ok(Incoming::Invalid { error, .. })) => monitor.skip(&error),
        }
    }
    Ok(monitor.stats())
}
