//! Relay client connections and the test-traffic generator used by `send`.

use std::str::FromStr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::{self, Message};
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use crate::midi14::{Channel, Value14};
use crate::relay::protocol::{classify, Control, Frame, Hello, Mode, Welcome};
use crate::wire::{build_message, encode_wire, Topic, WireError, WireMessage};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket error: {0}")]
    Ws(#[from] tungstenite::Error),
    #[error("relay closed the connection: {0}")]
    Rejected(String),
    #[error("unexpected first frame from relay: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// What a subscriber connection yields for each data frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Message(WireMessage),
    /// A data frame that failed validation, with its raw text.
    Invalid { text: String, error: WireError },
}

/// An open, greeted relay connection.
pub struct Connection {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    welcome: Welcome,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("welcome", &self.welcome)
            .finish_non_exhaustive()
    }
}

impl Connection {
    /// Connects, sends `hello` and waits for the relay's welcome.
    pub async fn open(url: &str, hello: Hello) -> Result<Self, ClientError> {
        let (mut ws, _) = connect_async(url).await?;
        if let MaybeTlsStream::Plain(tcp) = ws.get_ref() {
            let _ = tcp.set_nodelay(true);
        }
        ws.send(Message::text(Control::Hello(hello).to_text()))
            .await?;
        loop {
            match ws.next().await {
                Some(Ok(Message::Text(text))) => match classify(&text) {
                    Frame::Control(Control::Welcome(welcome)) => {
                        return Ok(Connection { ws, welcome })
                    }
                    _ => return Err(ClientError::Protocol(text.to_string())),
                },
                Some(Ok(Message::Close(frame))) => {
                    let reason = frame.map(|f| f.reason.to_string()).unwrap_or_default();
                    return Err(ClientError::Rejected(reason));
                }
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
                None => return Err(ClientError::Rejected("connection closed".into())),
            }
        }
    }

    pub async fn publisher(url: &str, token: Option<String>) -> Result<Self, ClientError> {
        let mut hello = Hello::new(Mode::Pub, &[]);
        hello.token = token;
        Self::open(url, hello).await
    }

    pub async fn subscriber(
        url: &str,
        topics: &[Topic],
        coalesce: Option<bool>,
        token: Option<String>,
    ) -> Result<Self, ClientError> {
        let mut hello = Hello::new(Mode::Sub, topics);
        hello.coalesce = coalesce;
        hello.token = token;
        Self::open(url, hello).await
    }

    pub fn welcome(&self) -> &Welcome {
        &self.welcome
    }

    pub async fn publish(&mut self, msg: &WireMessage) -> Result<(), ClientError> {
        self.send_text(encode_wire(msg)).await
    }

    /// Sends a raw text frame as-is.
    pub async fn send_text(&mut self, text: String) -> Result<(), ClientError> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    /// Next data frame; control frames are handled internally. `None` when
    /// the connection has ended.
    pub async fn next(&mut self) -> Option<Result<Incoming, ClientError>> {
        loop {
            let text = match self.ws.next().await? {
                Ok(Message::Text(text)) => text,
                Ok(Message::Close(_)) => return None,
                Ok(_) => continue,
                Err(e) => return Some(Err(e.into())),
            };
            match classify(&text) {
                Frame::Data(Ok(msg)) => return Some(Ok(Incoming::Message(msg))),
                Frame::Data(Err(error)) => {
                    return Some(Ok(Incoming::Invalid {
                        text: text.to_string(),
                        error,
                    }))
                }
                Frame::Control(Control::Ping) => {
                    if let Err(e) = self.send_text(Control::Pong.to_text()).await {
                        return Some(Err(e));
                    }
                }
                Frame::Control(_) | Frame::BadControl(_) => {}
            }
        }
    }

    /// Performs the closing handshake so every frame sent before it is
    /// processed by the relay.
    pub async fn close(mut self) -> Result<(), ClientError> {
        match self.ws.close(None).await {
            Ok(()) | Err(tungstenite::Error::ConnectionClosed) => {}
            Err(e) => return Err(e.into()),
        }
        while let Some(frame) = self.ws.next().await {
            if frame.is_err() {
                break;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid sweep {spec:?}: {reason}")]
pub struct SweepError {
    spec: String,
    reason: String,
}

/// A deterministic value ramp `start:end:step[:interval-ms]`.
///
/// Values run from `start` toward `end` in `step` increments and always
/// finish on `end`, so `0:16383:128` yields 129 values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sweep {
    pub start: Value14,
    pub end: Value14,
    pub step: u16,
    pub interval: Duration,
}

impl Sweep {
    pub fn values(&self) -> Vec<Value14> {
        let (start, end, step) = (self.start.get(), self.end.get(), self.step);
        let mut out: Vec<u16> = if start <= end {
            (start..end).step_by(step.into()).collect()
        } else {
            (end + 1..=start).rev().step_by(step.into()).collect()
        };
        out.push(end);
        out.into_iter()
            .map(|v| Value14::new(v).expect("sweep stays within its endpoints"))
            .collect()
    }
}

impl FromStr for Sweep {
    type Err = SweepError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| SweepError {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = spec.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(err("expected start:end:step[:interval-ms]"));
        }
        let value = |s: &str, name: &str| -> Result<Value14, SweepError> {
            let n: i64 = s
                .trim()
                .parse()
                .map_err(|_| err(&format!("{name} is not an integer")))?;
            Value14::try_from(n).map_err(|e| err(&format!("{name}: {e}")))
        };
        let start = value(parts[0], "start")?;
        let end = value(parts[1], "end")?;
        let step: u16 = parts[2]
            .trim()
            .parse()
            .map_err(|_| err("step is not a positive integer"))?;
        if step == 0 {
            return Err(err("step must be positive"));
        }
        let interval = match parts.get(3) {
            Some(ms) => Duration::from_millis(
                ms.trim()
                    .parse()
                    .map_err(|_| err("interval-ms is not an integer"))?,
            ),
            None => Duration::ZERO,
        };
        Ok(Sweep {
            start,
            end,
            step,
            interval,
        })
    }
}

/// Addressing for messages produced by `send`.
#[derive(Debug, Clone)]
pub struct SendTarget {
    pub topic: Topic,
    pub x: u8,
    pub y: u8,
    pub channel: Channel,
}

impl SendTarget {
    pub fn message(&self, value: Value14) -> Result<WireMessage, WireError> {
        build_message(self.x, self.y, value, self.channel, self.topic.as_str())
    }
}

/// Publishes one message per value, waiting `interval` between messages,
/// then closes cleanly. `on_frame` sees each encoded frame before it is sent.
pub async fn send_values(
    url: &str,
    token: Option<String>,
    target: &SendTarget,
    values: &[Value14],
    interval: Duration,
    mut on_frame: impl FnMut(&str),
) -> Result<usize, ClientError> {
    let messages = values
        .iter()
        .map(|&v| target.message(v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut conn = Connection::publisher(url, token).await?;
    for (i, msg) in messages.iter().enumerate() {
        if i > 0 && !interval.is_zero() {
            tokio::time::sleep(interval).await;
        }
        let text = encode_wire(msg);
        on_frame(&text);
        conn.send_text(text).await?;
    }
    conn.close().await?;
    Ok(messages.len())
}

/// Exponential reconnect delay: `base * 2^attempt`, capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_millis(500),
            cap: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }
}
