//! The three baseline switching interfaces (sequential FSM, pattern
//! recognition, direct tap) and the common [`Backend`] wrapper that also hosts
//! the dwell engine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    CycleOrder, GazeSample, GraspType, Millis, SelectionCause, SelectionEvent, SelectionSource,
};
use crate::dwell::{DwellConfig, DwellEngine, DwellUpdate, PanelLayout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GsiKind {
    #[serde(rename = "i-gsi")]
    IGsi,
    #[serde(rename = "pr")]
    Pr,
    #[serde(rename = "fsm")]
    Fsm,
    #[serde(rename = "app")]
    App,
}

impl GsiKind {
    pub const ALL: [GsiKind; 4] = [GsiKind::IGsi, GsiKind::Pr, GsiKind::Fsm, GsiKind::App];

    pub fn as_str(self) -> &'static str {
        match self {
            GsiKind::IGsi => "i-gsi",
            GsiKind::Pr => "pr",
            GsiKind::Fsm => "fsm",
            GsiKind::App => "app",
        }
    }
}

impl fmt::Display for GsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GsiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GsiKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown GSI kind `{s}`")))
    }
}

/// Muscle-activity patterns delivered by the pattern recognizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmgPattern {
    WaveIn,
    WaveOut,
    Fist,
    FingersSpread,
    DoubleTap,
    /// Optional sixth pattern that maps to Hook when enabled in [`PrConfig`].
    Synthetic,
}

impl EmgPattern {
    /// The five patterns of the stock recognizer.
    pub const STOCK: [EmgPattern; 5] = [
        EmgPattern::WaveIn,
        EmgPattern::WaveOut,
        EmgPattern::Fist,
        EmgPattern::FingersSpread,
        EmgPattern::DoubleTap,
    ];
}

/// A discrete operator input, already detected upstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GsiInput {
    CoContraction { t: Millis },
    EmgPattern { t: Millis, label: EmgPattern },
    Tap { t: Millis, grasp: GraspType },
    Gaze(GazeSample),
}

impl GsiInput {
    pub fn t(&self) -> Millis {
        match *self {
            GsiInput::CoContraction { t } => t,
            GsiInput::EmgPattern { t, .. } => t,
            GsiInput::Tap { t, .. } => t,
            GsiInput::Gaze(s) => s.t,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GsiInput::CoContraction { .. } => "cocontraction",
            GsiInput::EmgPattern { .. } => "emg_pattern",
            GsiInput::Tap { .. } => "tap",
            GsiInput::Gaze(_) => "gaze",
        }
    }

    /// The interface kind that accepts this input.
    pub fn accepted_by(&self) -> GsiKind {
        match self {
            GsiInput::CoContraction { .. } => GsiKind::Fsm,
            GsiInput::EmgPattern { .. } => GsiKind::Pr,
            GsiInput::Tap { .. } => GsiKind::App,
            GsiInput::Gaze(_) => GsiKind::IGsi,
        }
    }
}

// ---------------------------------------------------------------------------
// FSM

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmState {
    pub current: GraspType,
    pub initial: GraspType,
}

impl FsmState {
    pub fn new(initial: GraspType) -> Self {
        Self {
            current: initial,
            initial,
        }
    }
}

impl Default for FsmState {
    fn default() -> Self {
        Self::new(GraspType::Cylindrical)
    }
}

/// Advances the FSM one step in cycle order and reports the new state as a selection.
pub fn fsm_trigger(state: FsmState, t: Millis, order: &CycleOrder) -> (FsmState, SelectionEvent) {
    let next = FsmState {
        current: order.next(state.current),
        ..state
    };
    let event = SelectionEvent {
        t,
        grasp: next.current,
        source: SelectionSource::Fsm,
        cause: SelectionCause::Commit,
    };
    (next, event)
}

// ---------------------------------------------------------------------------
// Pattern recognition

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrConfig {
    /// Map [`EmgPattern::Synthetic`] to Hook so the PR interface can reach all six grasps.
    pub synthetic_hook_pattern: bool,
}

impl PrConfig {
    /// Grasps reachable through some pattern, in canonical order.
    pub fn reachable(&self) -> Vec<GraspType> {
        let mut out: Vec<GraspType> = GraspType::ALL[..5].to_vec();
        if self.synthetic_hook_pattern {
            out.push(GraspType::Hook);
        }
        out
    }
}

/// Pattern to grasp mapping of the PR interface.
pub fn pr_map(label: EmgPattern, config: &PrConfig) -> Result<GraspType> {
    Ok(match label {
        EmgPattern::WaveIn => GraspType::Cylindrical,
        EmgPattern::WaveOut => GraspType::Spherical,
        EmgPattern::Fist => GraspType::Tripod,
        EmgPattern::FingersSpread => GraspType::Pinch,
        EmgPattern::DoubleTap => GraspType::Lateral,
        EmgPattern::Synthetic if config.synthetic_hook_pattern => GraspType::Hook,
        EmgPattern::Synthetic => return Err(Error::UnsupportedGrasp(GraspType::Hook)),
    })
}

/// Inverse of [`pr_map`]: the pattern an operator forms to reach `grasp`.
pub fn pattern_for(grasp: GraspType, config: &PrConfig) -> Result<EmgPattern> {
    Ok(match grasp {
        GraspType::Cylindrical => EmgPattern::WaveIn,
        GraspType::Spherical => EmgPattern::WaveOut,
        GraspType::Tripod => EmgPattern::Fist,
        GraspType::Pinch => EmgPattern::FingersSpread,
        GraspType::Lateral => EmgPattern::DoubleTap,
        GraspType::Hook if config.synthetic_hook_pattern => EmgPattern::Synthetic,
        GraspType::Hook => return Err(Error::UnsupportedGrasp(GraspType::Hook)),
    })
}

/// How a misrecognized attempt is substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confusion {
    /// Uniform over the other reachable grasps.
    UniformOthers,
    /// Explicit substitution distribution per intended grasp. Each row must sum to 1.
    Matrix(BTreeMap<GraspType, BTreeMap<GraspType, f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrErrorModel {
    pub error_prob: f64,
    pub confusion: Confusion,
    pub rng_seed: u64,
}

impl Default for PrErrorModel {
    fn default() -> Self {
        Self {
            error_prob: 0.0,
            confusion: Confusion::UniformOthers,
            rng_seed: 0,
        }
    }
}

impl PrErrorModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_prob) {
            return Err(Error::InvalidConfig(format!(
                "error probability {} outside [0, 1]",
                self.error_prob
            )));
        }
        if let Confusion::Matrix(rows) = &self.confusion {
            for (intended, row) in rows {
                let sum: f64 = row.values().sum();
                if (sum - 1.0).abs() > 1e-9 || row.values().any(|&p| p < 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "confusion row for {intended} sums to {sum}"
                    )));
                }
                if row.get(intended).is_some_and(|&p| p > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "confusion row for {intended} substitutes the intended grasp"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Simulated recognition of an intended grasp: correct with probability
/// `1 - error_prob`, otherwise a substitute drawn from the confusion rule.
pub fn pr_recognize<R: Rng + ?Sized>(
    intended: GraspType,
    model: &PrErrorModel,
    config: &PrConfig,
    rng: &mut R,
) -> Result<GraspType> {
    pattern_for(intended, config)?;
    if !rng.random_bool(model.error_prob) {
        return Ok(intended);
    }
    match &model.confusion {
        Confusion::UniformOthers => {
            let others: Vec<GraspType> = config
                .reachable()
                .into_iter()
                .filter(|&g| g != intended)
                .collect();
            Ok(others[rng.random_range(0..others.len())])
        }
        Confusion::Matrix(rows) => {
            let row = rows.get(&intended).ok_or_else(|| {
                Error::InvalidConfig(format!("confusion matrix has no row for {intended}"))
            })?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = intended;
            for (&g, &p) in row {
                if p <= 0.0 {
                    continue;
                }
                acc += p;
                last = g;
                if u < acc {
                    return Ok(g);
                }
            }
            Ok(last)
        }
    }
}

// ---------------------------------------------------------------------------
// APP

pub fn app_tap(grasp: GraspType, t: Millis) -> SelectionEvent {
    SelectionEvent {
        t,
        grasp,
        source: SelectionSource::Tap,
        cause: SelectionCause::Commit,
    }
}

// ---------------------------------------------------------------------------
// Common wrapper

/// Configuration needed to instantiate any back-end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub cycle_order: CycleOrder,
    pub fsm_initial: GraspType,
    pub dwell: DwellConfig,
    pub panel: PanelLayout,
    pub pr: PrConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            cycle_order: CycleOrder::default(),
            fsm_initial: GraspType::Cylindrical,
            dwell: DwellConfig::default(),
            panel: PanelLayout::default(),
            pr: PrConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BackendOutput {
    pub selection: Option<SelectionEvent>,
    pub dwell: Option<DwellUpdate>,
}

/// One switching interface instance; single-writer, fed in event order.
#[derive(Debug, Clone)]
pub enum Backend {
    IGsi(DwellEngine),
    Fsm {
        state: FsmState,
        order: CycleOrder,
    },
    Pr {
        config: PrConfig,
        latched: Option<GraspType>,
    },
    App {
        latched: Option<GraspType>,
    },
}

impl Backend {
    pub fn new(kind: GsiKind, config: &BackendConfig) -> Result<Self> {
        Ok(match kind {
            GsiKind::IGsi => Backend::IGsi(DwellEngine::new(config.dwell, config.panel.clone())?),
            GsiKind::Fsm => Backend::Fsm {
                state: FsmState::new(config.fsm_initial),
                order: config.cycle_order,
            },
            GsiKind::Pr => Backend::Pr {
                config: config.pr,
                latched: None,
            },
            GsiKind::App => Backend::App { latched: None },
        })
    }

    pub fn kind(&self) -> GsiKind {
        match self {
            Backend::IGsi(_) => GsiKind::IGsi,
            Backend::Fsm { .. } => GsiKind::Fsm,
            Backend::Pr { .. } => GsiKind::Pr,
            Backend::App { .. } => GsiKind::App,
        }
    }

    /// Currently latched grasp, i.e. the grasp the prosthesis would execute.
    pub fn latched(&self) -> Option<GraspType> {
        match self {
            Backend::IGsi(engine) => engine.latched(),
            Backend::Fsm { state, .. } => Some(state.current),
            Backend::Pr { latched, .. } | Backend::App { latched } => *latched,
        }
    }

    pub fn handle(&mut self, input: &GsiInput) -> Result<BackendOutput> {
        if input.accepted_by() != self.kind() {
            return Err(Error::InputMismatch {
                kind: self.kind(),
                input: input.name(),
            });
        }
        let mut out = BackendOutput::default();
        match (self, *input) {
            (Backend::IGsi(engine), GsiInput::Gaze(sample)) => {
                let update = engine.ingest(&sample)?;
                out.selection = update.selection;
                out.dwell = Some(update);
            }
            (Backend::Fsm { state, order }, GsiInput::CoContraction { t }) => {
                let (next, event) = fsm_trigger(*state, t, order);
                *state = next;
                out.selection = Some(event);
            }
            (Backend::Pr { config, latched }, GsiInput::EmgPattern { t, label }) => {
                let grasp = pr_map(label, config)?;
                *latched = Some(grasp);
                out.selection = Some(SelectionEvent {
                    t,
                    grasp,
                    source: SelectionSource::Pr,
                    cause: SelectionCause::Commit,
                });
            }
            (Backend::App { latched }, GsiInput::Tap { t, grasp }) => {
                let event = app_tap(grasp, t);
                *latched = Some(grasp);
                out.selection = Some(event);
            }
            _ => unreachable!("input kind checked above"),
        }
        Ok(out)
    }

    /// Ends any in-progress dwell; called on phase changes.
    pub fn interrupt(&mut self) {
        if let Backend::IGsi(engine) = self {
            engine.break_span();
        }
    }
}
