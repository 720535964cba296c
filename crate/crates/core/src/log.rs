//! Append-only session logs (JSON Lines) and offline replay.
//!
//! Line 1 is a header carrying the effective configuration, the catalog and
//! the sequence set. Each following line is one event: operator inputs
//! (gaze, taps, patterns, co-contractions, phase changes, object fixations)
//! interleaved with what the session derived from them (selections, scored
//! trials). The last line is a trailer with the event count and a SHA-256
//! digest of every preceding line.
//!
//! Replay rebuilds the session from the header, re-applies the inputs and
//! requires the derived events to match the recorded ones exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{EmgPattern, GsiInput, GsiKind};
use crate::domain::{
    Catalog, GazeSample, GraspType, Millis, PhaseEvent, SelectionEvent, TrialRecord,
};
use crate::error::{Error, Result};
use crate::sequencer::SequenceSet;
use crate::session::{Effects, Session, SessionConfig, SessionInput};

pub const LOG_SCHEMA_VERSION: &str = "gsi-session/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: String,
    pub gsi_kind: GsiKind,
    pub subject_id: String,
    pub suite_seed: Option<u64>,
    pub config: SessionConfig,
    pub catalog: Catalog,
    pub set: SequenceSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    Gaze(GazeSample),
    Tap { t: Millis, grasp: GraspType },
    Cocontraction { t: Millis },
    EmgPattern { t: Millis, label: EmgPattern },
    Phase(PhaseEvent),
    ObjectFixation { t: Millis },
    Selection(SelectionEvent),
    Trial(TrialRecord),
}

impl LogEvent {
    pub fn as_input(&self) -> Option<SessionInput> {
        Some(match *self {
            LogEvent::Gaze(s) => SessionInput::Gsi(GsiInput::Gaze(s)),
            LogEvent::Tap { t, grasp } => SessionInput::Gsi(GsiInput::Tap { t, grasp }),
            LogEvent::Cocontraction { t } => SessionInput::Gsi(GsiInput::CoContraction { t }),
            LogEvent::EmgPattern { t, label } => {
                SessionInput::Gsi(GsiInput::EmgPattern { t, label })
            }
            LogEvent::Phase(p) => SessionInput::Phase(p),
            LogEvent::ObjectFixation { t } => SessionInput::ObjectFixation { t },
            LogEvent::Selection(_) | LogEvent::Trial(_) => return None,
        })
    }

    pub fn from_input(input: &SessionInput) -> Self {
        match *input {
            SessionInput::Gsi(GsiInput::Gaze(s)) => LogEvent::Gaze(s),
            SessionInput::Gsi(GsiInput::Tap { t, grasp }) => LogEvent::Tap { t, grasp },
            SessionInput::Gsi(GsiInput::CoContraction { t }) => LogEvent::Cocontraction { t },
            SessionInput::Gsi(GsiInput::EmgPattern { t, label }) => {
                LogEvent::EmgPattern { t, label }
            }
            SessionInput::Phase(p) => LogEvent::Phase(p),
            SessionInput::ObjectFixation { t } => LogEvent::ObjectFixation { t },
        }
    }

    /// Events the session derives from an input's effects, in emission order.
    pub fn derived(effects: &Effects) -> Vec<LogEvent> {
        let mut out = Vec::new();
        if let Some(s) = effects.selection {
            out.push(LogEvent::Selection(s));
        }
        if let Some(r) = &effects.trial {
            out.push(LogEvent::Trial(r.clone()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "end")]
struct Trailer {
    events: usize,
    digest: String,
}

/// Trailer check of a parsed log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Integrity {
    pub recorded_events: usize,
    pub actual_events: usize,
    pub recorded_digest: String,
    pub computed_digest: String,
}

impl Integrity {
    pub fn is_intact(&self) -> bool {
        self.recorded_events == self.actual_events && self.recorded_digest == self.computed_digest
    }

    pub fn check(&self) -> Result<()> {
        if self.recorded_events != self.actual_events {
            return Err(Error::Schema(format!(
                "trailer counts {} events, log has {}",
                self.recorded_events, self.actual_events
            )));
        }
        if self.recorded_digest != self.computed_digest {
            return Err(Error::Schema(format!(
                "content digest mismatch: trailer {}, computed {}",
                self.recorded_digest, self.computed_digest
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub events: Vec<LogEvent>,
}

fn header_line(header: &LogHeader) -> String {
    let mut value = serde_json::to_value(header).expect("header serializes");
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("type".into(), "header".into());
    }
    serde_json::to_string(&value).expect("header serializes")
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl SessionLog {
    pub fn trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Trial(r) => Some(r),
            _ => None,
        })
    }

    pub fn selections(&self) -> impl Iterator<Item = &SelectionEvent> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Selection(s) => Some(s),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut hasher = Sha256::new();
        let mut out = String::new();
        let mut push = |line: String, out: &mut String| {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            out.push_str(&line);
            out.push('\n');
        };
        push(header_line(&self.header), &mut out);
        for e in &self.events {
            push(
                serde_json::to_string(e).expect("event serializes"),
                &mut out,
            );
        }
        let trailer = Trailer {
            events: self.events.len(),
            digest: hex(&hasher.finalize()),
        };
        out.push_str(&serde_json::to_string(&trailer).expect("trailer serializes"));
        out.push('\n');
        out
    }

    /// Parses a log, checking the schema version and the trailer digest.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (log, integrity) = Self::parse_jsonl(text)?;
        integrity.check()?;
        Ok(log)
    }

    /// Parses a log without rejecting a digest mismatch, so that a tampered
    /// log can still be replayed to locate the first divergent event.
    pub fn parse_jsonl(text: &str) -> Result<(Self, Integrity)> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Schema("empty session log".into()))?;
        let mut head: serde_json::Value = serde_json::from_str(first)?;
        match head.get("schema_version").and_then(|v| v.as_str()) {
            Some(LOG_SCHEMA_VERSION) => {}
            other => {
                return Err(Error::Schema(format!(
                    "expected log schema {LOG_SCHEMA_VERSION}, found {other:?}"
                )))
            }
        }
        if let serde_json::Value::Object(map) = &mut head {
            map.remove("type");
        }
        let header: LogHeader = serde_json::from_value(head)?;

        let mut hasher = Sha256::new();
        hasher.update(first.as_bytes());
        hasher.update(b"\n");
        let mut events = Vec::new();
        let mut trailer = None;
        for (lineno, line) in lines {
            if trailer.is_some() {
                return Err(Error::Schema(format!(
                    "line {}: content after trailer",
                    lineno + 1
                )));
            }
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::Schema(format!("line {}: {e}", lineno + 1)))?;
            if value.get("type").and_then(|t| t.as_str()) == Some("end") {
                trailer = Some(serde_json::from_value::<Trailer>(value)?);
                continue;
            }
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            let event: LogEvent = serde_json::from_value(value)
                .map_err(|e| Error::Schema(format!("line {}: {e}", lineno + 1)))?;
            events.push(event);
        }
        let trailer = trailer.ok_or_else(|| Error::Schema("log has no trailer".into()))?;
        let integrity = Integrity {
            recorded_events: trailer.events,
            actual_events: events.len(),
            recorded_digest: trailer.digest,
            computed_digest: hex(&hasher.finalize()),
        };
        Ok((Self { header, events }, integrity))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// A session that records everything it accepts.
#[derive(Debug, Clone)]
pub struct Recorder {
    session: Session,
    log: SessionLog,
}

impl Recorder {
    pub fn new(
        config: SessionConfig,
        catalog: Catalog,
        set: SequenceSet,
        subject_id: impl Into<String>,
        suite_seed: Option<u64>,
    ) -> Result<Self> {
        let header = LogHeader {
            schema_version: LOG_SCHEMA_VERSION.to_string(),
            gsi_kind: config.gsi_kind,
            subject_id: subject_id.into(),
            suite_seed,
            config: config.clone(),
            catalog: catalog.clone(),
            set: set.clone(),
        };
        Ok(Self {
            session: Session::new(config, catalog, set)?,
            log: SessionLog {
                header,
                events: Vec::new(),
            },
        })
    }

    /// Applies an input; rejected inputs leave the log untouched.
    pub fn apply(&mut self, input: SessionInput) -> Result<Effects> {
        let effects = self.session.apply(input)?;
        self.log.events.push(LogEvent::from_input(&input));
        self.log.events.extend(LogEvent::derived(&effects));
        Ok(effects)
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }
}

/// Where replay first disagreed with the recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// Zero-based index into the event list (line number minus two).
    pub event_index: usize,
    pub expected: Option<String>,
    pub found: Option<String>,
    pub reason: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "event {} (line {}): {}; expected {}, found {}",
            self.event_index,
            self.event_index + 2,
            self.reason,
            self.expected.as_deref().unwrap_or("nothing"),
            self.found.as_deref().unwrap_or("nothing"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub trials: Vec<TrialRecord>,
    pub divergence: Option<Divergence>,
}

impl ReplayOutcome {
    pub fn is_identical(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Re-derives selections and trial records from the recorded inputs.
pub fn replay(log: &SessionLog) -> Result<ReplayOutcome> {
    let h = &log.header;
    if h.schema_version != LOG_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported log schema {}",
            h.schema_version
        )));
    }
    let mut session = Session::new(h.config.clone(), h.catalog.clone(), h.set.clone())?;
    let mut pending: std::collections::VecDeque<LogEvent> = Default::default();
    let to_line = |e: &LogEvent| serde_json::to_string(e).expect("event serializes");
    let diverge =
        |i: usize, exp: Option<&LogEvent>, found: Option<&LogEvent>, reason: &str| Divergence {
            event_index: i,
            expected: exp.map(to_line),
            found: found.map(to_line),
            reason: reason.to_string(),
        };

    for (i, event) in log.events.iter().enumerate() {
        match event.as_input() {
            Some(input) => {
                if let Some(missing) = pending.front() {
                    return Ok(ReplayOutcome {
                        trials: session.trials().to_vec(),
                        divergence: Some(diverge(
                            i,
                            Some(missing),
                            Some(event),
                            "derived event missing",
                        )),
                    });
                }
                match session.apply(input) {
                    Ok(effects) => pending.extend(LogEvent::derived(&effects)),
                    Err(e) => {
                        return Ok(ReplayOutcome {
                            trials: session.trials().to_vec(),
                            divergence: Some(diverge(
                                i,
                                None,
                                Some(event),
                                &format!("input rejected: {e}"),
                            )),
                        })
                    }
                }
            }
            None => {
                let expected = pending.pop_front();
                let same = expected
                    .as_ref()
                    .is_some_and(|exp| to_line(exp) == to_line(event));
                if !same {
                    return Ok(ReplayOutcome {
                        trials: session.trials().to_vec(),
                        divergence: Some(diverge(
                            i,
                            expected.as_ref(),
                            Some(event),
                            "derived event differs",
                        )),
                    });
                }
            }
        }
    }
    let divergence = pending.front().map(|missing| {
        diverge(
            log.events.len(),
            Some(missing),
            None,
            "derived event missing at end of log",
        )
    });
    Ok(ReplayOutcome {
        trials: session.trials().to_vec(),
        divergence,
    })
}
