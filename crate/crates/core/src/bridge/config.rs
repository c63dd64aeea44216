//! Route configuration.
//!
//! ```json
//! {
//!   "sinks":  { "synth": "port:midiC1D0", "log": "file:/tmp/nrpn.hex" },
//!   "curves": { "soft": { "out_min": 0.0, "out_max": 0.9, "exponent": 2.0 } },
//!   "cv_out": "-",
//!   "rules": [
//!     { "topic": "midiTransport-1", "channel": 1, "params": [38, 6],
//!       "emit": ["nrpn", "cv"], "sink": "synth", "curve": "soft" },
//!     { "topic": "midiTransport-1", "emit": ["nrpn"], "nrpn_param": [1, 2] }
//!   ]
//! }
//! ```
//!
//! `channel` and `params` narrow the match and may be omitted. `sink` and
//! `curve` default to the entries named `default`, which the caller supplies
//! unless the document defines them. `nrpn_param` replaces the parameter pair
//! taken from the message. `cv_out` is `-` for stdout or a file path.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use super::curve::CurveSpec;
use super::sink::SinkSpec;
use crate::midi14::{Channel, NrpnParam, U7};
use crate::wire::{Topic, WireMessage};

pub const DEFAULT_NAME: &str = "default";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {reason}")]
    Field { path: String, reason: String },
}

fn field(path: impl Into<String>, reason: impl ToString) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Action {
    Nrpn,
    Cv,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    sinks: BTreeMap<String, String>,
    #[serde(default)]
    curves: BTreeMap<String, CurveSpec>,
    #[serde(default)]
    cv_out: Option<String>,
    rules: Vec<RawRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    topic: String,
    #[serde(default)]
    channel: Option<i64>,
    #[serde(default)]
    params: Option<[i64; 2]>,
    emit: Vec<Action>,
    #[serde(default)]
    sink: Option<String>,
    #[serde(default)]
    curve: Option<String>,
    #[serde(default)]
    nrpn_param: Option<[i64; 2]>,
}

/// Where CV records go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CvTarget {
    Stdout,
    File(PathBuf),
}

impl CvTarget {
    pub fn parse(s: &str) -> Self {
        if s == "-" {
            CvTarget::Stdout
        } else {
            CvTarget::File(s.into())
        }
    }
}

/// One routing rule. Rules are tried in order and the first match wins.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteRule {
    pub topic: Topic,
    pub channel: Option<Channel>,
    pub params: Option<NrpnParam>,
    pub emit_nrpn: bool,
    pub emit_cv: bool,
    /// Index into the bridge's sink list.
    pub sink: usize,
    pub curve: CurveSpec,
    pub nrpn_param: Option<NrpnParam>,
}

impl RouteRule {
    /// Matches everything on `topic` and sends NRPN to sink 0.
    pub fn catch_all(topic: Topic) -> Self {
        RouteRule {
            topic,
            channel: None,
            params: None,
            emit_nrpn: true,
            emit_cv: false,
            sink: 0,
            curve: CurveSpec::default(),
            nrpn_param: None,
        }
    }

    pub fn matches(&self, msg: &WireMessage) -> bool {
        msg.event == self.topic
            && self.channel.is_none_or(|c| c == msg.channel)
            && self.params.is_none_or(|p| p == msg.param())
    }
}

/// Defaults applied where a document leaves things unnamed.
#[derive(Debug, Clone)]
pub struct RouteDefaults {
    pub sink: SinkSpec,
    pub curve: CurveSpec,
    pub cv_out: Option<CvTarget>,
}

impl Default for RouteDefaults {
    fn default() -> Self {
        RouteDefaults {
            sink: SinkSpec::Hex,
            curve: CurveSpec::default(),
            cv_out: None,
        }
    }
}

/// A validated route configuration, ready to open.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteTable {
    pub rules: Vec<RouteRule>,
    /// Named sinks; the index is what [`RouteRule::sink`] refers to.
    pub sinks: Vec<(String, SinkSpec)>,
    pub cv_out: Option<CvTarget>,
}

impl RouteTable {
    /// One catch-all rule per topic. CV is emitted when `defaults.cv_out` is
    /// set.
    pub fn for_topics(topics: &[Topic], defaults: &RouteDefaults) -> Self {
        let rules = topics
            .iter()
            .map(|t| RouteRule {
                emit_cv: defaults.cv_out.is_some(),
                curve: defaults.curve,
                ..RouteRule::catch_all(t.clone())
            })
            .collect();
        RouteTable {
            rules,
            sinks: vec![(DEFAULT_NAME.to_string(), defaults.sink.clone())],
            cv_out: defaults.cv_out.clone(),
        }
    }

    pub fn from_json(text: &str, defaults: &RouteDefaults) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;

        let mut sinks = vec![(DEFAULT_NAME.to_string(), defaults.sink.clone())];
        for (name, spec) in &raw.sinks {
            let spec: SinkSpec = spec.parse().map_err(|e| field(format!("sinks.{name}"), e))?;
            if name == DEFAULT_NAME {
                sinks[0].1 = spec;
            } else {
                sinks.push((name.clone(), spec));
            }
        }
        let mut curves = raw.curves;
        for (name, curve) in &curves {
            curve
                .validate()
                .map_err(|e| field(format!("curves.{name}"), e))?;
        }
        curves
            .entry(DEFAULT_NAME.to_string())
            .or_insert(defaults.curve);

        if raw.rules.is_empty() {
            return Err(field("rules", "at least one rule is required"));
        }
        let mut rules = Vec::with_capacity(raw.rules.len());
        for (i, rule) in raw.rules.into_iter().enumerate() {
            let at = |name: &str| format!("rules[{i}].{name}");
            let topic = Topic::new(rule.topic).map_err(|e| field(at("topic"), e))?;
            let channel = rule
                .channel
                .map(Channel::try_from)
                .transpose()
                .map_err(|e| field(at("channel"), e))?;
            let pair = |p: Option<[i64; 2]>, name: &str| -> Result<Option<NrpnParam>, ConfigError> {
                p.map(|[msb, lsb]| {
                    Ok(NrpnParam {
                        msb: U7::try_from(msb).map_err(|e| field(at(name), e))?,
                        lsb: U7::try_from(lsb).map_err(|e| field(at(name), e))?,
                    })
                })
                .transpose()
            };
            let params = pair(rule.params, "params")?;
            let nrpn_param = pair(rule.nrpn_param, "nrpn_param")?;
            if nrpn_param.is_some_and(NrpnParam::is_null) {
                return Err(field(at("nrpn_param"), "(127, 127) is the null parameter"));
            }
            if rule.emit.is_empty() {
                return Err(field(at("emit"), "needs at least one of \"nrpn\", \"cv\""));
            }
            let sink_name = rule.sink.as_deref().unwrap_or(DEFAULT_NAME);
            let sink = sinks
                .iter()
                .position(|(name, _)| name == sink_name)
                .ok_or_else(|| field(at("sink"), format!("no sink named {sink_name:?}")))?;
            let curve_name = rule.curve.as_deref().unwrap_or(DEFAULT_NAME);
            let curve = *curves
                .get(curve_name)
                .ok_or_else(|| field(at("curve"), format!("no curve named {curve_name:?}")))?;
            rules.push(RouteRule {
                topic,
                channel,
                params,
                emit_nrpn: rule.emit.contains(&Action::Nrpn),
                emit_cv: rule.emit.contains(&Action::Cv),
                sink,
                curve,
                nrpn_param,
            });
        }

        let cv_out = match raw.cv_out.as_deref() {
            Some("") => return Err(field("cv_out", "empty path")),
            Some(s) => Some(CvTarget::parse(s)),
            None => defaults.cv_out.clone(),
        };
        if cv_out.is_none() && rules.iter().any(|r| r.emit_cv) {
            return Err(field("cv_out", "rules emit cv but no cv output is configured"));
        }
        Ok(RouteTable {
            rules,
            sinks,
            cv_out,
        })
    }

    /// Topics referenced by the rules, in first-seen order.
    pub fn topics(&self) -> Vec<Topic> {
        let mut out: Vec<Topic> = Vec::new();
        for rule in &self.rules {
            if !out.contains(&rule.topic) {
                out.push(rule.topic.clone());
            }
        }
        out
    }
}
