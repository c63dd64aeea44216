//! 14-bit control values, MIDI 1.0 Control Change / NRPN byte encoding and a
//! streaming NRPN receiver.
//!
//! A 14-bit value is carried as two 7-bit halves. The split is the plain
//! bitwise one (`msb = v >> 7`, `lsb = v & 127`) and [`combine14`] is its
//! exact inverse.

use std::fmt;

use thiserror::Error;

/// Errors produced while constructing or encoding MIDI values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Midi14Error {
    #[error("14-bit value {0} out of range 0..=16383")]
    ValueOutOfRange(i64),
    #[error("7-bit data byte {0} out of range 0..=127")]
    DataByteOutOfRange(i64),
    #[error("MIDI channel {0} out of range 1..=16")]
    ChannelOutOfRange(i64),
    #[error("NRPN parameter (127, 127) is the null parameter and cannot be sent")]
    NullParameter,
}

/// A 7-bit MIDI data byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct U7(u8);

impl U7 {
    pub const MIN: U7 = U7(0);
    pub const MAX: U7 = U7(127);

    pub fn new(value: u8) -> Result<Self, Midi14Error> {
        if value > 127 {
            return Err(Midi14Error::DataByteOutOfRange(value.into()));
        }
        Ok(U7(value))
    }

    pub const fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for U7 {
    type Error = Midi14Error;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match u8::try_from(value) {
            Ok(v) if v <= 127 => Ok(U7(v)),
            _ => Err(Midi14Error::DataByteOutOfRange(value)),
        }
    }
}

impl From<U7> for u8 {
    fn from(value: U7) -> Self {
        value.0
    }
}

impl fmt::Display for U7 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A 14-bit control value in `0..=16383`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Value14(u16);

impl Value14 {
    pub const MIN: Value14 = Value14(0);
    pub const MAX: Value14 = Value14(16383);

    pub fn new(value: u16) -> Result<Self, Midi14Error> {
        if value > Self::MAX.0 {
            return Err(Midi14Error::ValueOutOfRange(value.into()));
        }
        Ok(Value14(value))
    }

    pub const fn get(self) -> u16 {
        self.0
    }

    /// All 16384 values in ascending order.
    pub fn all() -> impl DoubleEndedIterator<Item = Value14> + ExactSizeIterator {
        (0..=Self::MAX.0).map(Value14)
    }
}

impl TryFrom<i64> for Value14 {
    type Error = Midi14Error;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match u16::try_from(value) {
            Ok(v) if v <= Self::MAX.0 => Ok(Value14(v)),
            _ => Err(Midi14Error::ValueOutOfRange(value)),
        }
    }
}

impl From<Value14> for u16 {
    fn from(value: Value14) -> Self {
        value.0
    }
}

impl fmt::Display for Value14 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// MIDI channel, numbered 1..=16 as users see it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Channel(u8);

impl Channel {
    pub fn new(number: u8) -> Result<Self, Midi14Error> {
        if !(1..=16).contains(&number) {
            return Err(Midi14Error::ChannelOutOfRange(number.into()));
        }
        Ok(Channel(number))
    }

    /// Builds a channel from the low nibble of a status byte.
    pub fn from_nibble(status: u8) -> Self {
        Channel((status & 0x0F) + 1)
    }

    pub const fn number(self) -> u8 {
        self.0
    }

    /// Zero-based form used in status bytes.
    pub const fn index(self) -> u8 {
        self.0 - 1
    }
}

impl Default for Channel {
    fn default() -> Self {
        Channel(1)
    }
}

impl TryFrom<i64> for Channel {
    type Error = Midi14Error;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match u8::try_from(value) {
            Ok(v) if (1..=16).contains(&v) => Ok(Channel(v)),
            _ => Err(Midi14Error::ChannelOutOfRange(value)),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// The two 7-bit halves of a [`Value14`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitBytes {
    msb: U7,
    lsb: U7,
}

impl SplitBytes {
    pub const fn msb(self) -> U7 {
        self.msb
    }

    pub const fn lsb(self) -> U7 {
        self.lsb
    }
}

/// Splits a 14-bit value into `(value >> 7, value & 127)`.
pub fn split14(value: Value14) -> SplitBytes {
    let v = value.get();
    SplitBytes {
        msb: U7((v >> 7) as u8),
        lsb: U7((v & 127) as u8),
    }
}

/// Reassembles `msb * 128 + lsb`. Inputs of 128 or more indicate a corrupted
/// data byte and are rejected.
pub fn combine14(msb: u8, lsb: u8) -> Result<Value14, Midi14Error> {
    let msb = U7::new(msb)?;
    let lsb = U7::new(lsb)?;
    Ok(combine_u7(msb, lsb))
}

pub(crate) fn combine_u7(msb: U7, lsb: U7) -> Value14 {
    Value14((u16::from(msb.0) << 7) | u16::from(lsb.0))
}

/// Controller numbers used by the NRPN convention.
pub mod cc {
    pub const DATA_ENTRY_MSB: u8 = 6;
    pub const DATA_ENTRY_LSB: u8 = 38;
    pub const NRPN_LSB: u8 = 98;
    pub const NRPN_MSB: u8 = 99;
}

const CONTROL_CHANGE: u8 = 0xB0;

/// A 3-byte Control Change message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ControlChange {
    pub channel: Channel,
    pub controller: U7,
    pub value: U7,
}

impl ControlChange {
    pub fn new(channel: Channel, controller: U7, value: U7) -> Self {
        ControlChange {
            channel,
            controller,
            value,
        }
    }
}

/// Serializes a Control Change as `0xB0 | (channel - 1), controller, value`.
/// Running status is never applied.
pub fn encode_cc(cc: &ControlChange) -> [u8; 3] {
    [
        CONTROL_CHANGE | cc.channel.index(),
        cc.controller.get(),
        cc.value.get(),
    ]
}

/// An NRPN parameter number as its (CC99, CC98) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NrpnParam {
    pub msb: U7,
    pub lsb: U7,
}

impl NrpnParam {
    /// The reserved "no parameter selected" pair.
    pub const NULL: NrpnParam = NrpnParam {
        msb: U7::MAX,
        lsb: U7::MAX,
    };

    pub fn new(msb: u8, lsb: u8) -> Result<Self, Midi14Error> {
        Ok(NrpnParam {
            msb: U7::new(msb)?,
            lsb: U7::new(lsb)?,
        })
    }

    pub fn is_null(self) -> bool {
        self == Self::NULL
    }
}

impl Default for NrpnParam {
    /// (38, 6), the pair the reference browser page addresses.
    fn default() -> Self {
        NrpnParam {
            msb: U7(38),
            lsb: U7(6),
        }
    }
}

impl fmt::Display for NrpnParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.msb, self.lsb)
    }
}

/// Length of a canonical NRPN group: four Control Changes, no running status.
pub const NRPN_GROUP_LEN: usize = 12;

/// Emits the parameter-select and data-entry sequence
/// CC99, CC98, CC6, CC38 on `channel`.
pub fn encode_nrpn(
    param: NrpnParam,
    value: Value14,
    channel: Channel,
) -> Result<[u8; NRPN_GROUP_LEN], Midi14Error> {
    if param.is_null() {
        return Err(Midi14Error::NullParameter);
    }
    let split = split14(value);
    let messages = [
        (cc::NRPN_MSB, param.msb),
        (cc::NRPN_LSB, param.lsb),
        (cc::DATA_ENTRY_MSB, split.msb),
        (cc::DATA_ENTRY_LSB, split.lsb),
    ];
    let mut out = [0u8; NRPN_GROUP_LEN];
    for (chunk, (controller, data)) in out.chunks_exact_mut(3).zip(messages) {
        chunk.copy_from_slice(&encode_cc(&ControlChange::new(channel, U7(controller), data)));
    }
    Ok(out)
}

/// A decoded NRPN data-entry update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NrpnEvent {
    pub channel: Channel,
    pub param: NrpnParam,
    pub value: Value14,
    /// `false` for an MSB-only update where the LSB is taken as 0.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct ChannelState {
    param_msb: Option<U7>,
    param_lsb: Option<U7>,
    data_msb: Option<U7>,
}

impl ChannelState {
    fn selected(&self) -> Option<NrpnParam> {
        let param = NrpnParam {
            msb: self.param_msb?,
            lsb: self.param_lsb?,
        };
        (!param.is_null()).then_some(param)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Parse {
    /// No running status; data bytes here are a sync loss.
    Idle,
    /// Discarding data bytes after a sync loss.
    Resync,
    /// Running status with the number of data bytes each message takes.
    Running { status: u8, len: u8 },
    /// First data byte of a two-byte message has been read.
    HalfMessage { status: u8, first: u8 },
    /// Inside a SysEx payload.
    SysEx,
    /// Skipping the data bytes of a system common message.
    Common { remaining: u8 },
}

/// Streaming NRPN receiver over a raw MIDI byte stream.
///
/// Keeps the selected parameter per channel, accepts running status and
/// resynchronizes on stray data bytes. Only Control Changes are interpreted;
/// other channel messages are parsed and ignored.
///
/// Single owner: one receiver per stream.
#[derive(Debug, Clone)]
pub struct NrpnReceiver {
    parse: Parse,
    channels: [ChannelState; 16],
    sync_losses: u64,
    discarded: u64,
}

impl Default for NrpnReceiver {
    fn default() -> Self {
        Self::new()
    }
}

impl NrpnReceiver {
    pub fn new() -> Self {
        NrpnReceiver {
            parse: Parse::Idle,
            channels: [ChannelState::default(); 16],
            sync_losses: 0,
            discarded: 0,
        }
    }

    /// Number of times a data byte arrived without a usable status byte.
    pub fn sync_losses(&self) -> u64 {
        self.sync_losses
    }

    /// Total bytes discarded while resynchronizing.
    pub fn discarded_bytes(&self) -> u64 {
        self.discarded
    }

    pub fn reset(&mut self) {
        *self = NrpnReceiver {
            sync_losses: self.sync_losses,
            discarded: self.discarded,
            ..Self::new()
        };
    }

    /// Feeds one byte. A single byte completes at most one message, so at
    /// most one event is returned.
    pub fn feed(&mut self, byte: u8) -> Option<NrpnEvent> {
        if byte & 0x80 != 0 {
            self.status(byte);
            return None;
        }
        match self.parse {
            Parse::Idle => {
                self.sync_losses += 1;
                self.discarded += 1;
                self.parse = Parse::Resync;
                None
            }
            Parse::Resync => {
                self.discarded += 1;
                None
            }
            Parse::SysEx => None,
            Parse::Common { remaining } => {
                self.parse = match remaining {
                    1 => Parse::Idle,
                    n => Parse::Common { remaining: n - 1 },
                };
                None
            }
            Parse::Running { len: 1, .. } => None,
            Parse::Running { status, .. } => {
                self.parse = Parse::HalfMessage {
                    status,
                    first: byte,
                };
                None
            }
            Parse::HalfMessage { status, first } => {
                self.parse = Parse::Running { status, len: 2 };
                if status & 0xF0 == CONTROL_CHANGE {
                    self.control_change(Channel::from_nibble(status), U7(first), U7(byte))
                } else {
                    None
                }
            }
        }
    }

    /// Feeds a whole buffer, collecting every event.
    pub fn feed_all(&mut self, bytes: &[u8]) -> Vec<NrpnEvent> {
        bytes.iter().filter_map(|&b| self.feed(b)).collect()
    }

    fn status(&mut self, byte: u8) {
        self.parse = match byte {
            0x80..=0xBF | 0xE0..=0xEF => Parse::Running {
                status: byte,
                len: 2,
            },
            0xC0..=0xDF => Parse::Running {
                status: byte,
                len: 1,
            },
            // Real-time bytes may appear anywhere and leave the parser untouched.
            0xF8..=0xFF => return,
            // SysEx and system common messages cancel running status.
            0xF0 => Parse::SysEx,
            0xF1 | 0xF3 => Parse::Common { remaining: 1 },
            0xF2 => Parse::Common { remaining: 2 },
            0xF4..=0xF7 => Parse::Idle,
            _ => unreachable!("data byte routed to status handler"),
        };
    }

    fn control_change(&mut self, channel: Channel, controller: U7, value: U7) -> Option<NrpnEvent> {
        let state = &mut self.channels[usize::from(channel.index())];
        match controller.get() {
            cc::NRPN_MSB => {
                state.param_msb = Some(value);
                state.data_msb = None;
                None
            }
            cc::NRPN_LSB => {
                state.param_lsb = Some(value);
                state.data_msb = None;
                None
            }
            cc::DATA_ENTRY_MSB => {
                let param = state.selected()?;
                state.data_msb = Some(value);
                Some(NrpnEvent {
                    channel,
                    param,
                    value: combine_u7(value, U7::MIN),
                    complete: false,
                })
            }
            cc::DATA_ENTRY_LSB => {
                let param = state.selected()?;
                let msb = state.data_msb?;
                Some(NrpnEvent {
                    channel,
                    param,
                    value: combine_u7(msb, value),
                    complete: true,
                })
            }
            _ => None,
        }
    }
}

/// Formats bytes as uppercase hex separated by single spaces, e.g. `B0 63 26`.
pub fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 3);
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{b:02X}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid hex byte {token:?} at position {position}")]
pub struct HexError {
    pub token: String,
    pub position: usize,
}

/// Parses whitespace-separated two-digit hex bytes.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, HexError> {
    text.split_whitespace()
        .enumerate()
        .map(|(position, token)| {
            if token.len() != 2 {
                return Err(HexError {
                    token: token.to_string(),
                    position,
                });
            }
            u8::from_str_radix(token, 16).map_err(|_| HexError {
                token: token.to_string(),
                position,
            })
        })
        .collect()
}
