//! Grasp-type switching interfaces for prosthetic-hand control: a gaze dwell
//! selector, three baseline interfaces, experiment sequencing, session
//! scoring and replay, synthetic operators, and the analysis statistics.

pub mod analytics;
pub mod backends;
pub mod config;
pub mod domain;
pub mod dwell;
pub mod error;
pub mod log;
pub mod rng;
pub mod sequencer;
pub mod session;
pub mod simulator;
pub mod sink;
pub mod wire;

pub use backends::{Backend, BackendConfig, EmgPattern, GsiInput, GsiKind};
pub use config::WorkbenchConfig;
pub use domain::{
    cycle_distance, Catalog, CycleOrder, GazeSample, GraspType, Millis, ObjectItem, Phase,
    PhaseEvent, SelectionEvent, TrialRecord,
};
pub use error::{Error, Result};
pub use log::{replay, SessionLog};
pub use sequencer::{SequenceSet, SuiteConfig, SuiteFile};
pub use session::{Session, SessionConfig, SessionInput};
pub use sink::{CommandCounter, CommandSink, MemoryTransport, SinkConfig, SinkTarget, Transport};
pub use wire::{CommandRecord, WireMessage};
