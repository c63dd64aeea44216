use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::get;
use axum::{Json, Router};
use futures_util::stream::{SplitSink, SplitStream};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::mpsc;
use tokio::time::{interval_at, timeout, Instant, MissedTickBehavior};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::{self, Message};
use tokio_tungstenite::{accept_async, WebSocketStream};
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;
use tracing::{debug, info, warn};

use super::hub::{Hub, HubConfig, Session, StatsSnapshot, DEFAULT_QUEUE_CAPACITY};
use super::queue::Routed;
use super::protocol::{classify, parse_hello, Control, Frame, Hello, HelloError, Welcome};

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(20);
/// Unanswered pings tolerated before a connection is closed.
pub const MAX_MISSED_PONGS: u32 = 2;

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub queue_capacity: usize,
    pub coalesce: bool,
    /// Shared secret required in every hello when set.
    pub token: Option<String>,
    pub heartbeat: Duration,
    pub hello_timeout: Duration,
    /// Serve `GET /stats` as JSON on this address.
    pub stats_addr: Option<SocketAddr>,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            coalesce: false,
            token: None,
            heartbeat: DEFAULT_HEARTBEAT,
            hello_timeout: Duration::from_secs(10),
            stats_addr: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RelayError {
    #[error("cannot bind {what}: {source}")]
    Bind {
        what: &'static str,
        #[source]
        source: io::Error,
    },
    #[error("invalid relay config: {0}")]
    Config(String),
}

/// A running relay. Dropping the handle leaves the relay running; call
/// [`RelayHandle::shutdown`] to stop it.
#[derive(Debug)]
pub struct RelayHandle {
    local_addr: SocketAddr,
    stats_addr: Option<SocketAddr>,
    hub: Arc<Hub>,
    token: CancellationToken,
    tracker: TaskTracker,
}

impl RelayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.local_addr)
    }

    pub fn stats_addr(&self) -> Option<SocketAddr> {
        self.stats_addr
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.hub.stats()
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Resolves once shutdown has been requested.
    pub async fn stopped(&self) {
        self.token.cancelled().await
    }

    /// Closes the listener and every connection, then waits for them.
    pub async fn shutdown(self) {
        self.token.cancel();
        self.tracker.close();
        self.tracker.wait().await;
    }
}

/// Binds the relay and starts accepting WebSocket clients.
pub async fn serve(addr: impl ToSocketAddrs, config: RelayConfig) -> Result<RelayHandle, RelayError> {
    if config.queue_capacity == 0 {
        return Err(RelayError::Config("queue capacity must be at least 1".into()));
    }
    if config.heartbeat.is_zero() {
        return Err(RelayError::Config("heartbeat interval must be positive".into()));
    }
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| RelayError::Bind {
            what: "relay address",
            source,
        })?;
    let local_addr = listener.local_addr().map_err(|source| RelayError::Bind {
        what: "relay address",
        source,
    })?;
    let hub = Arc::new(Hub::new(HubConfig {
        queue_capacity: config.queue_capacity,
        coalesce: config.coalesce,
    }));
    let token = CancellationToken::new();
    let tracker = TaskTracker::new();

    let stats_addr = match config.stats_addr {
        Some(addr) => {
            let listener = TcpListener::bind(addr)
                .await
                .map_err(|source| RelayError::Bind {
                    what: "stats address",
                    source,
                })?;
            let bound = listener.local_addr().ok();
            let hub = hub.clone();
            let app = Router::new().route("/stats", get(move || async move { Json(hub.stats()) }));
            let token = token.clone();
            tracker.spawn(async move {
                if let Err(e) = axum::serve(listener, app)
                    .with_graceful_shutdown(token.cancelled_owned())
                    .await
                {
                    warn!("stats endpoint stopped: {e}");
                }
            });
            bound
        }
        None => None,
    };

    info!("relay listening on {local_addr}");
    let config = Arc::new(config);
    tracker.spawn(accept_loop(
        listener,
        hub.clone(),
        config,
        token.clone(),
        tracker.clone(),
    ));
    Ok(RelayHandle {
        local_addr,
        stats_addr,
        hub,
        token,
        tracker,
    })
}

async fn accept_loop(
    listener: TcpListener,
    hub: Arc<Hub>,
    config: Arc<RelayConfig>,
    token: CancellationToken,
    tracker: TaskTracker,
) {
    loop {
        tokio::select! {
            _ = token.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((tcp, peer)) => {
                    tracker.spawn(handle_connection(
                        tcp,
                        peer,
                        hub.clone(),
                        config.clone(),
                        token.clone(),
                    ));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
        }
    }
}

type WsSink = SplitSink<WebSocketStream<TcpStream>, Message>;
type WsStream = SplitStream<WebSocketStream<TcpStream>>;

fn close_frame(code: CloseCode, reason: &str) -> Message {
    Message::Close(Some(CloseFrame {
        code,
        reason: reason.into(),
    }))
}

async fn first_text(stream: &mut WsStream) -> Result<String, HelloError> {
    while let Some(msg) = stream.next().await {
        match msg {
            Ok(Message::Text(text)) => return Ok(text.to_string()),
            Ok(Message::Ping(_) | Message::Pong(_)) => continue,
            Ok(_) => return Err(HelloError::NotHello),
            Err(e) => return Err(HelloError::Malformed(e.to_string())),
        }
    }
    Err(HelloError::NotHello)
}

fn check_hello(hello: &Hello, config: &RelayConfig) -> Result<(), HelloError> {
    match &config.token {
        Some(expected) if hello.token.as_deref() != Some(expected.as_str()) => {
            Err(HelloError::BadToken)
        }
        _ => Ok(()),
    }
}

async fn handle_connection(
    tcp: TcpStream,
    peer: SocketAddr,
    hub: Arc<Hub>,
    config: Arc<RelayConfig>,
    token: CancellationToken,
) {
    let _ = tcp.set_nodelay(true);
    let ws = match accept_async(tcp).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("{peer}: websocket handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut stream) = ws.split();

    let hello = match timeout(config.hello_timeout, first_text(&mut stream)).await {
        Ok(Ok(text)) => parse_hello(&text),
        Ok(Err(e)) => Err(e),
        Err(_) => Err(HelloError::Timeout),
    };
    let accepted = hello.and_then(|hello| {
        check_hello(&hello, &config)?;
        let topics = hello.parsed_topics()?;
        Ok((hello, topics))
    });
    let (hello, topics) = match accepted {
        Ok(ok) => ok,
        Err(e) => {
            debug!("{peer}: rejected: {e}");
            let _ = sink
                .send(close_frame(CloseCode::Policy, &e.to_string()))
                .await;
            return;
        }
    };

    let session = hub.register(hello.mode, topics, hello.coalesce);
    let welcome = Control::Welcome(Welcome {
        session: session.id(),
        topics: session.topics().iter().map(|t| t.to_string()).collect(),
        coalesce: session.coalesce(),
    });
    if sink.send(Message::text(welcome.to_text())).await.is_err() {
        hub.unregister(&session);
        return;
    }
    debug!("{peer}: session {} as {:?}", session.id(), session.mode());

    let (ctrl_tx, ctrl_rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(write_loop(sink, session.clone(), ctrl_rx));
    read_loop(&mut stream, &hub, &session, &config, &token, &ctrl_tx, peer).await;
    hub.unregister(&session);
    drop(ctrl_tx);
    let _ = writer.await;
    debug!("{peer}: session {} closed", session.id());
}

async fn read_loop(
    stream: &mut WsStream,
    hub: &Hub,
    session: &Session,
    config: &RelayConfig,
    token: &CancellationToken,
    ctrl: &mpsc::UnboundedSender<Message>,
    peer: SocketAddr,
) {
    let mut heartbeat = interval_at(Instant::now() + config.heartbeat, config.heartbeat);
    heartbeat.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut missed = 0u32;
    loop {
        tokio::select! {
            _ = token.cancelled() => {
                let _ = ctrl.send(close_frame(CloseCode::Away, "relay shutting down"));
                return;
            }
            _ = heartbeat.tick() => {
                if missed >= MAX_MISSED_PONGS {
                    info!("{peer}: no pong after {missed} pings, closing");
                    let _ = ctrl.send(close_frame(CloseCode::Policy, "heartbeat timeout"));
                    return;
                }
                missed += 1;
                let _ = ctrl.send(Message::Ping(Default::default()));
            }
            frame = stream.next() => match frame {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(Message::Pong(_))) => missed = 0,
                Some(Ok(Message::Ping(_) | Message::Frame(_))) => {}
                Some(Ok(Message::Binary(_))) => hub.record_invalid(),
                Some(Ok(Message::Text(text))) => match classify(&text) {
                    Frame::Data(Ok(msg)) if session.mode().publishes() => {
                        hub.publish(&msg);
                    }
                    Frame::Control(Control::Ping) => {
                        let _ = ctrl.send(Message::text(Control::Pong.to_text()));
                    }
                    Frame::Control(Control::Pong) => missed = 0,
                    Frame::Data(Err(e)) => {
                        debug!("{peer}: skipped frame: {e}");
                        hub.record_invalid();
                    }
                    _ => hub.record_invalid(),
                },
            },
        }
    }
}

/// Frames written per flush when a backlog has built up.
const WRITE_BATCH: usize = 64;

/// Writes `first` plus whatever else is already queued, then flushes once.
async fn write_batch(
    sink: &mut WsSink,
    session: &Session,
    first: Arc<Routed>,
) -> Result<(), tungstenite::Error> {
    sink.feed(Message::text(&*first.text)).await?;
    for _ in 1..WRITE_BATCH {
        match session.try_next() {
            Some(routed) => sink.feed(Message::text(&*routed.text)).await?,
            None => break,
        }
    }
    sink.flush().await
}

async fn write_loop(
    mut sink: WsSink,
    session: Arc<Session>,
    mut ctrl: mpsc::UnboundedReceiver<Message>,
) {
    loop {
        tokio::select! {
            biased;
            msg = ctrl.recv() => match msg {
                Some(msg) => {
                    let closing = matches!(msg, Message::Close(_));
                    if sink.send(msg).await.is_err() || closing {
                        break;
                    }
                }
                None => break,
            },
            item = session.next() => match item {
                Some(routed) => {
                    if write_batch(&mut sink, &session, routed).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    let _ = sink.close().await;
}
