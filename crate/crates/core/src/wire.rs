//! JSON envelope carrying one split 14-bit control update.
//!
//! ```text
//! {"event":"midiTransport-1","data":{"msbx":38,"msby":6,"lsbx":2,"lsby":44,"channel":1}}
//! ```
//!
//! `msbx`/`msby` hold the parameter pair, `lsbx`/`lsby` hold the value's MSB
//! and LSB. The names are kept as-is for compatibility with existing browser
//! senders; the accessors use unambiguous names. An optional `"v"` key is
//! reserved for future schema versions and currently ignored, as are any other
//! unknown keys.

use std::fmt;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::midi14::{combine_u7, split14, Channel, NrpnParam, Value14, U7};

pub const DEFAULT_TOPIC: &str = "midiTransport-1";
pub const MAX_TOPIC_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl WireError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        WireError::Invalid {
            field,
            reason: reason.into(),
        }
    }

    /// Field name for validation errors.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            WireError::Parse(_) => None,
            WireError::Invalid { field, .. } => Some(field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic longer than {MAX_TOPIC_LEN} characters")]
    TooLong,
    #[error("topic contains {0:?}; allowed characters are A-Z a-z 0-9 _ -")]
    BadChar(char),
}

/// Relay routing key: 1 to 64 characters from `[A-Za-z0-9_-]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Topic(String);

impl Topic {
    pub fn new(name: impl Into<String>) -> Result<Self, TopicError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TopicError::Empty);
        }
        if name.len() > MAX_TOPIC_LEN {
            return Err(TopicError::TooLong);
        }
        if let Some(c) = name
            .chars()
            .find(|c| !(c.is_ascii_alphanumeric() || *c == '_' || *c == '-'))
        {
            return Err(TopicError::BadChar(c));
        }
        Ok(Topic(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for Topic {
    fn default() -> Self {
        Topic(DEFAULT_TOPIC.to_string())
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Topic {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::new(s)
    }
}

/// A validated control update as it travels between publisher, relay and
/// subscribers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WireMessage {
    pub event: Topic,
    pub msbx: U7,
    pub msby: U7,
    pub lsbx: U7,
    pub lsby: U7,
    pub channel: Channel,
}

/// Identifies one control for coalescing: distinct keys never replace each
/// other.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ControlKey {
    pub topic: Topic,
    pub msbx: U7,
    pub msby: U7,
    pub channel: Channel,
}

impl WireMessage {
    pub fn param(&self) -> NrpnParam {
        NrpnParam {
            msb: self.msbx,
            lsb: self.msby,
        }
    }

    pub fn value(&self) -> Value14 {
        combine_u7(self.lsbx, self.lsby)
    }

    pub fn key(&self) -> ControlKey {
        ControlKey {
            topic: self.event.clone(),
            msbx: self.msbx,
            msby: self.msby,
            channel: self.channel,
        }
    }
}

/// Packs a control update: `x`/`y` go to `msbx`/`msby`, the value's high
/// seven bits to `lsbx` and its low seven bits to `lsby`.
pub fn build_message(
    x: u8,
    y: u8,
    a: Value14,
    chan: Channel,
    event: &str,
) -> Result<WireMessage, WireError> {
    let msbx = U7::new(x).map_err(|e| WireError::invalid("msbx", e.to_string()))?;
    let msby = U7::new(y).map_err(|e| WireError::invalid("msby", e.to_string()))?;
    let event = Topic::new(event).map_err(|e| WireError::invalid("event", e.to_string()))?;
    let split = split14(a);
    Ok(WireMessage {
        event,
        msbx,
        msby,
        lsbx: split.msb(),
        lsby: split.lsb(),
        channel: chan,
    })
}

#[derive(Serialize)]
struct Envelope<'a> {
    event: &'a str,
    data: Data,
}

#[derive(Serialize)]
struct Data {
    msbx: u8,
    msby: u8,
    lsbx: u8,
    lsby: u8,
    channel: u8,
}

/// Single-line JSON with a fixed key order.
pub fn encode_wire(msg: &WireMessage) -> String {
    let envelope = Envelope {
        event: msg.event.as_str(),
        data: Data {
            msbx: msg.msbx.get(),
            msby: msg.msby.get(),
            lsbx: msg.lsbx.get(),
            lsby: msg.lsby.get(),
            channel: msg.channel.number(),
        },
    };
    serde_json::to_string(&envelope).expect("envelope serialization is infallible")
}

/// Parses and validates an envelope. Never panics on arbitrary input.
pub fn decode_wire(text: &str) -> Result<WireMessage, WireError> {
    let root: Value = serde_json::from_str(text).map_err(|e| WireError::Parse(e.to_string()))?;
    decode_value(&root)
}

pub fn decode_wire_bytes(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let root: Value =
        serde_json::from_slice(bytes).map_err(|e| WireError::Parse(e.to_string()))?;
    decode_value(&root)
}

/// Validates an already-parsed JSON value.
pub fn decode_value(root: &Value) -> Result<WireMessage, WireError> {
    let root = root
        .as_object()
        .ok_or_else(|| WireError::invalid("envelope", "expected a JSON object"))?;
    let event = match root.get("event") {
        Some(Value::String(s)) => {
            Topic::new(s.as_str()).map_err(|e| WireError::invalid("event", e.to_string()))?
        }
        Some(_) => return Err(WireError::invalid("event", "expected a string")),
        None => return Err(WireError::invalid("event", "missing")),
    };
    let data = match root.get("data") {
        Some(Value::Object(data)) => data,
        Some(_) => return Err(WireError::invalid("data", "expected an object")),
        None => return Err(WireError::invalid("data", "missing")),
    };
    let channel = int_field(data, "channel")?;
    let channel =
        Channel::try_from(channel).map_err(|e| WireError::invalid("channel", e.to_string()))?;
    Ok(WireMessage {
        event,
        msbx: u7_field(data, "msbx")?,
        msby: u7_field(data, "msby")?,
        lsbx: u7_field(data, "lsbx")?,
        lsby: u7_field(data, "lsby")?,
        channel,
    })
}

fn int_field(data: &Map<String, Value>, field: &'static str) -> Result<i64, WireError> {
    match data.get(field) {
        None => Err(WireError::invalid(field, "missing")),
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| WireError::invalid(field, format!("{n} is not an integer"))),
        Some(other) => Err(WireError::invalid(
            field,
            format!("expected an integer, got {other}"),
        )),
    }
}

fn u7_field(data: &Map<String, Value>, field: &'static str) -> Result<U7, WireError> {
    let n = int_field(data, field)?;
    U7::try_from(n).map_err(|e| WireError::invalid(field, e.to_string()))
}
