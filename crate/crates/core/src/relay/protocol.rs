//! Control frames exchanged on a relay connection.
//!
//! Every text frame is either a control frame (a JSON object with an `"op"`
//! key) or a data frame in the [`wire`](crate::wire) envelope format.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::wire::{decode_value, Topic, WireError, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pub,
    Sub,
    Both,
}

impl Mode {
    pub fn publishes(self) -> bool {
        matches!(self, Mode::Pub | Mode::Both)
    }

    pub fn subscribes(self) -> bool {
        matches!(self, Mode::Sub | Mode::Both)
    }
}

/// First frame a client sends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub mode: Mode,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalesce: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl Hello {
    pub fn new(mode: Mode, topics: &[Topic]) -> Self {
        Hello {
            mode,
            topics: topics.iter().map(|t| t.to_string()).collect(),
            coalesce: None,
            token: None,
        }
    }

    /// Validated subscription list; an empty list means the default topic.
    pub fn parsed_topics(&self) -> Result<Vec<Topic>, HelloError> {
        if self.topics.is_empty() {
            return Ok(vec![Topic::default()]);
        }
        let mut topics = Vec::with_capacity(self.topics.len());
        for name in &self.topics {
            let topic = Topic::new(name.as_str()).map_err(|e| HelloError::Topic {
                topic: name.clone(),
                reason: e.to_string(),
            })?;
            if !topics.contains(&topic) {
                topics.push(topic);
            }
        }
        Ok(topics)
    }
}

/// Relay's reply to a valid hello.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Welcome {
    pub session: u64,
    pub topics: Vec<String>,
    pub coalesce: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Control {
    Hello(Hello),
    Welcome(Welcome),
    Ping,
    Pong,
}

impl Control {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("control frame serialization is infallible")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HelloError {
    #[error("first frame must be a hello control frame")]
    NotHello,
    #[error("malformed hello: {0}")]
    Malformed(String),
    #[error("invalid topic {topic:?}: {reason}")]
    Topic { topic: String, reason: String },
    #[error("bad token")]
    BadToken,
    #[error("no hello received in time")]
    Timeout,
}

/// Classified incoming text frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Control(Control),
    /// A control frame with an unknown or malformed `op`.
    BadControl(String),
    Data(Result<WireMessage, WireError>),
}

pub fn classify(text: &str) -> Frame {
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Frame::Data(Err(WireError::Parse(e.to_string()))),
    };
    if value.get("op").is_some() {
        return match serde_json::from_value::<Control>(value) {
            Ok(control) => Frame::Control(control),
            Err(e) => Frame::BadControl(e.to_string()),
        };
    }
    Frame::Data(decode_value(&value))
}

/// Parses the opening frame of a connection.
pub fn parse_hello(text: &str) -> Result<Hello, HelloError> {
    match classify(text) {
        Frame::Control(Control::Hello(hello)) => Ok(hello),
        Frame::Control(_) | Frame::Data(_) => Err(HelloError::NotHello),
        Frame::BadControl(e) => Err(HelloError::Malformed(e)),
    }
}
