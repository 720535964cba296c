//! Command sink: line-delimited JSON command records written to a byte
//! stream. When the transport fails, records are held in a bounded buffer and
//! delivered in order once it recovers; records beyond the bound are dropped
//! and a gap marker takes their place in the stream.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::TcpStream;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domain::SelectionEvent;
use crate::error::{Error, Result};
use crate::wire::CommandRecord;

/// Destination of command lines.
pub trait Transport: Send {
    /// Writes one complete line, newline included.
    fn send(&mut self, line: &str) -> io::Result<()>;
}

pub struct StdoutTransport;

impl Transport for StdoutTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        let mut out = io::stdout().lock();
        out.write_all(line.as_bytes())?;
        out.flush()
    }
}

pub struct FileTransport {
    file: File,
}

impl FileTransport {
    pub fn append(path: &std::path::Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file })
    }
}

impl Transport for FileTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        self.file.write_all(line.as_bytes())?;
        self.file.flush()
    }
}

/// TCP client that connects lazily and reconnects after a failed write.
pub struct TcpTransport {
    addr: String,
    stream: Option<TcpStream>,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            stream: None,
        }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        if self.stream.is_none() {
            let s = TcpStream::connect(&self.addr)?;
            s.set_nodelay(true)?;
            self.stream = Some(s);
        }
        let stream = self.stream.as_mut().expect("connected above");
        let result = stream
            .write_all(line.as_bytes())
            .and_then(|_| stream.flush());
        if result.is_err() {
            self.stream = None;
        }
        result
    }
}

/// Collects lines in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemoryTransport {
    lines: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
}

impl MemoryTransport {
    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("memory transport lock").clone()
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, line: &str) -> io::Result<()> {
        self.lines
            .lock()
            .expect("memory transport lock")
            .push(line.to_string());
        Ok(())
    }
}

/// Sink destination as written in the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SinkTarget {
    #[default]
    Stdout,
    File {
        path: PathBuf,
    },
    Tcp {
        addr: String,
    },
    /// Discard commands.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkConfig {
    pub target: SinkTarget,
    /// Records held while the transport is down.
    pub buffer_bound: usize,
}

impl Default for SinkConfig {
    fn default() -> Self {
        Self {
            target: SinkTarget::Stdout,
            buffer_bound: 100,
        }
    }
}

impl SinkConfig {
    pub fn open(&self) -> Result<Option<Box<dyn Transport>>> {
        Ok(match &self.target {
            SinkTarget::Stdout => Some(Box::new(StdoutTransport)),
            SinkTarget::File { path } => Some(Box::new(FileTransport::append(path)?)),
            SinkTarget::Tcp { addr } => Some(Box::new(TcpTransport::new(addr.clone()))),
            SinkTarget::None => None,
        })
    }
}

/// Marker written in place of dropped records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "gap")]
pub struct GapMarker {
    pub session: String,
    pub first_seq: u64,
    pub last_seq: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    Record(CommandRecord),
    Gap(GapMarker),
}

impl Pending {
    fn line(&self) -> String {
        let mut s = match self {
            Pending::Record(r) => serde_json::to_string(r),
            Pending::Gap(g) => serde_json::to_string(g),
        }
        .expect("sink lines serialize");
        s.push('\n');
        s
    }
}

pub struct CommandSink {
    transport: Option<Box<dyn Transport>>,
    bound: usize,
    pending: VecDeque<Pending>,
    /// Records dropped since the buffer filled, by session.
    dropping: Option<GapMarker>,
}

impl CommandSink {
    pub fn new(transport: Option<Box<dyn Transport>>, bound: usize) -> Self {
        Self {
            transport,
            bound,
            pending: VecDeque::new(),
            dropping: None,
        }
    }

    pub fn from_config(config: &SinkConfig) -> Result<Self> {
        Ok(Self::new(config.open()?, config.buffer_bound))
    }

    /// Records held for delivery.
    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    /// Queues a record and tries to deliver everything pending. Delivery
    /// failures are not errors: the record stays buffered or is dropped.
    pub fn submit(&mut self, record: CommandRecord) {
        if self.transport.is_none() {
            return;
        }
        if self.pending.len() >= self.bound {
            match &mut self.dropping {
                Some(gap) if gap.session == record.session => {
                    gap.last_seq = record.seq;
                    gap.dropped += 1;
                }
                _ => {
                    self.close_gap();
                    self.dropping = Some(GapMarker {
                        session: record.session.clone(),
                        first_seq: record.seq,
                        last_seq: record.seq,
                        dropped: 1,
                    });
                }
            }
            ::log::warn!(
                "command sink buffer full, dropped seq {} of {}",
                record.seq,
                record.session
            );
        } else {
            self.close_gap();
            self.pending.push_back(Pending::Record(record));
        }
        self.flush();
    }

    fn close_gap(&mut self) {
        if let Some(gap) = self.dropping.take() {
            ::log::warn!(
                "command sink gap: {} records of {} (seq {}..={})",
                gap.dropped,
                gap.session,
                gap.first_seq,
                gap.last_seq
            );
            self.pending.push_back(Pending::Gap(gap));
        }
    }

    /// Delivers pending lines in order until the transport fails.
    pub fn flush(&mut self) -> bool {
        if self.transport.is_none() {
            return true;
        }
        loop {
            if self.pending.is_empty() {
                self.close_gap();
            }
            let Some(front) = self.pending.front() else {
                return true;
            };
            let transport = self.transport.as_mut().expect("checked above");
            if transport.send(&front.line()).is_err() {
                return false;
            }
            self.pending.pop_front();
        }
    }
}

/// Per-session numbering of command records.
#[derive(Debug, Clone)]
pub struct CommandCounter {
    session: String,
    next_seq: u64,
}

impl CommandCounter {
    pub fn new(session: impl Into<String>) -> Self {
        Self {
            session: session.into(),
            next_seq: 0,
        }
    }

    pub fn record(&mut self, selection: &SelectionEvent) -> CommandRecord {
        let r = CommandRecord {
            t: selection.t,
            grasp: selection.grasp,
            session: self.session.clone(),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        r
    }
}
