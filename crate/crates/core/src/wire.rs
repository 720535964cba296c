//! Wire protocol between the session service and its clients: one JSON
//! object per message, discriminated by `type`.

use serde::{Deserialize, Serialize};

use crate::backends::{EmgPattern, GsiInput, GsiKind};
use crate::domain::{
    GazeSample, GraspType, Millis, ObjectItem, Phase, PhaseEvent, SelectionEvent, TrialRecord,
};
use crate::error::Result;
use crate::session::{DwellProgress, SessionInput};

pub const WIRE_SCHEMA_VERSION: &str = "gsi-wire/1";

/// Outbound record for every committed selection, the stand-in for the
/// command channel to a prosthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub t: Millis,
    pub grasp: GraspType,
    pub session: String,
    /// Strictly increasing within a session, starting at 0.
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hello {
    pub schema_version: Option<String>,
    pub session: Option<String>,
    pub gsi_kind: Option<GsiKind>,
    pub subject_id: Option<String>,
    /// Set of the loaded suite to run; the service picks set 1 if absent.
    pub set_index: Option<u32>,
    pub feedback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello(Hello),
    Gaze(GazeSample),
    Tap {
        t: Millis,
        grasp: GraspType,
    },
    Cocontraction {
        t: Millis,
    },
    EmgPattern {
        t: Millis,
        label: EmgPattern,
    },
    Phase(PhaseEvent),
    ObjectFixation {
        t: Millis,
    },
    PanelState {
        #[serde(default)]
        t: Option<Millis>,
        latched: Option<GraspType>,
        dwell: Option<DwellProgress>,
        #[serde(default)]
        phase: Option<Phase>,
        /// Object to grasp; present only during Operation.
        #[serde(default)]
        target: Option<ObjectItem>,
    },
    Selection(SelectionEvent),
    Command(CommandRecord),
    Trial(TrialRecord),
    Error {
        #[serde(default)]
        t: Option<Millis>,
        code: String,
        message: String,
    },
}

impl WireMessage {
    pub fn parse(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        WireMessage::Error {
            t: None,
            code: code.to_string(),
            message: message.into(),
        }
    }

    /// The session input carried by an inbound message, if any.
    pub fn to_input(&self) -> Option<SessionInput> {
        Some(match *self {
            WireMessage::Gaze(s) => SessionInput::Gsi(GsiInput::Gaze(s)),
            WireMessage::Tap { t, grasp } => SessionInput::Gsi(GsiInput::Tap { t, grasp }),
            WireMessage::Cocontraction { t } => SessionInput::Gsi(GsiInput::CoContraction { t }),
            WireMessage::EmgPattern { t, label } => {
                SessionInput::Gsi(GsiInput::EmgPattern { t, label })
            }
            WireMessage::Phase(p) => SessionInput::Phase(p),
            WireMessage::ObjectFixation { t } => SessionInput::ObjectFixation { t },
            _ => return None,
        })
    }

    pub fn from_input(input: &SessionInput) -> Self {
        match *input {
            SessionInput::Gsi(GsiInput::Gaze(s)) => WireMessage::Gaze(s),
            SessionInput::Gsi(GsiInput::Tap { t, grasp }) => WireMessage::Tap { t, grasp },
            SessionInput::Gsi(GsiInput::CoContraction { t }) => WireMessage::Cocontraction { t },
            SessionInput::Gsi(GsiInput::EmgPattern { t, label }) => {
                WireMessage::EmgPattern { t, label }
            }
            SessionInput::Phase(p) => WireMessage::Phase(p),
            SessionInput::ObjectFixation { t } => WireMessage::ObjectFixation { t },
        }
    }
}
