//! High-resolution (14-bit) MIDI control over WebSockets.
//!
//! - [`midi14`]: value split/combine, Control Change and NRPN byte encoding,
//!   streaming NRPN receiver.
//! - [`wire`]: the JSON envelope a control update travels in.
//! - [`relay`]: topic-based WebSocket fan-out server.
//! - [`bridge`]: subscriber that writes NRPN bytes and CV records.
//! - [`client`], [`monitor`]: publisher/subscriber helpers behind the CLI.

pub mod bridge;
pub mod client;
pub mod midi14;
pub mod monitor;
pub mod relay;
pub mod wire;
