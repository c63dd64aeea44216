//! WebSocket pub/sub relay.
//!
//! Clients open with a hello control frame naming their mode (`pub`, `sub`
//! or `both`) and topics. Publishers then send wire envelopes; the relay
//! validates each one and fans it out to every subscriber of its topic
//! through a bounded per-subscriber queue.

pub mod hub;
pub mod protocol;
pub mod queue;
mod server;

pub use hub::{Hub, HubConfig, Session, StatsSnapshot, DEFAULT_QUEUE_CAPACITY};
pub use protocol::{Control, Hello, HelloError, Mode, Welcome};
pub use server::{serve, RelayConfig, RelayError, RelayHandle, DEFAULT_HEARTBEAT, MAX_MISSED_PONGS};
