//! Destinations for encoded NRPN groups.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::midi14::to_hex;

/// Receives whole NRPN groups. A group is written in one piece and never
/// interleaved with another.
pub trait MidiSink: Send {
    fn write_group(&mut self, group: &[u8]) -> io::Result<()>;

    /// Re-establishes the destination after a write failure.
    fn reopen(&mut self) -> io::Result<()> {
        Ok(())
    }

    fn describe(&self) -> String;
}

/// Writes one uppercase hex line per group, e.g. `B0 63 26 B0 62 06 ...`.
pub struct HexSink<W> {
    out: W,
    name: String,
}

impl<W: Write + Send> HexSink<W> {
    pub fn new(out: W, name: impl Into<String>) -> Self {
        HexSink {
            out,
            name: name.into(),
        }
    }
}

impl HexSink<io::Stdout> {
    pub fn stdout() -> Self {
        HexSink::new(io::stdout(), "hex:stdout")
    }
}

impl<W: Write + Send> MidiSink for HexSink<W> {
    fn write_group(&mut self, group: &[u8]) -> io::Result<()> {
        let mut line = to_hex(group);
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        self.out.flush()
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Hex lines appended to a file, reopened after failures.
pub struct FileSink {
    path: PathBuf,
    file: Option<File>,
}

impl FileSink {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let mut sink = FileSink {
            path: path.into(),
            file: None,
        };
        sink.reopen()?;
        Ok(sink)
    }
}

impl MidiSink for FileSink {
    fn write_group(&mut self, group: &[u8]) -> io::Result<()> {
        let file = self
            .file
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "sink file not open"))?;
        let mut line = to_hex(group);
        line.push('\n');
        let result = file.write_all(line.as_bytes()).and_then(|()| file.flush());
        if result.is_err() {
            self.file = None;
        }
        result
    }

    fn reopen(&mut self) -> io::Result<()> {
        self.file = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        Ok(())
    }

    fn describe(&self) -> String {
        format!("file:{}", self.path.display())
    }
}

/// Raw MIDI bytes written to an OS MIDI device node, such as an ALSA
/// rawmidi port (`/dev/snd/midiC1D0`) or a FIFO read by another program.
pub struct PortSink {
    path: PathBuf,
    port: Option<File>,
}

impl PortSink {
    /// Bare names resolve under `/dev/snd`; anything containing `/` is used
    /// as a path.
    pub fn resolve(name: &str) -> PathBuf {
        if name.contains('/') {
            PathBuf::from(name)
        } else {
            PathBuf::from("/dev/snd").join(name)
        }
    }

    pub fn open(name: &str) -> io::Result<Self> {
        let mut sink = PortSink {
            path: Self::resolve(name),
            port: None,
        };
        sink.reopen()?;
        Ok(sink)
    }
}

impl MidiSink for PortSink {
    fn write_group(&mut self, group: &[u8]) -> io::Result<()> {
        let port = self
            .port
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "MIDI port not open"))?;
        let result = port.write_all(group).and_then(|()| port.flush());
        if result.is_err() {
            self.port = None;
        }
        result
    }

    fn reopen(&mut self) -> io::Result<()> {
        self.port = Some(OpenOptions::new().write(true).open(&self.path)?);
        Ok(())
    }

    fn describe(&self) -> String {
        format!("port:{}", self.path.display())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid sink {0:?}; expected hex, file:PATH or port:NAME")]
pub struct SinkSpecError(String);

/// Textual sink selector: `hex`, `file:PATH` or `port:NAME`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkSpec {
    Hex,
    File(PathBuf),
    Port(String),
}

impl SinkSpec {
    pub fn open(&self) -> io::Result<Box<dyn MidiSink>> {
        Ok(match self {
            SinkSpec::Hex => Box::new(HexSink::stdout()),
            SinkSpec::File(path) => Box::new(FileSink::open(path)?),
            SinkSpec::Port(name) => Box::new(PortSink::open(name)?),
        })
    }
}

impl FromStr for SinkSpec {
    type Err = SinkSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SinkSpecError(s.to_string());
        match s.split_once(':') {
            None if s == "hex" => Ok(SinkSpec::Hex),
            Some(("file", path)) if !path.is_empty() => Ok(SinkSpec::File(path.into())),
            Some(("port", name)) if !name.is_empty() => Ok(SinkSpec::Port(name.to_string())),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for SinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SinkSpec::Hex => f.write_str("hex"),
            SinkSpec::File(path) => write!(f, "file:{}", path.display()),
            SinkSpec::Port(name) => write!(f, "port:{name}"),
        }
    }
}
