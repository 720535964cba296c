//! Experiment session: the Standby/Operation phase machine, phase-gated input
//! routing to the active interface, and trial scoring.
//!
//! All inputs of a session are merged into one stream ordered by time. Each
//! Operation window presents the next slot of the sequence set; leaving
//! Operation closes and scores the trial.

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendConfig, GsiInput, GsiKind};
use crate::domain::{
    Catalog, GraspType, Millis, ObjectItem, Phase, PhaseEvent, SelectionCause, SelectionEvent,
    SelectionSource, StAnchor, TrialRecord,
};
use crate::dwell::DwellUpdate;
use crate::error::{Error, Result};
use crate::sequencer::SequenceSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseThresholds {
    pub threshold_deg: f64,
    pub hysteresis_deg: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self {
            threshold_deg: 90.0,
            hysteresis_deg: 10.0,
        }
    }
}

/// Phase from head yaw relative to the table normal, with a hysteresis band
/// around the threshold in which the previous phase is kept.
pub fn classify_phase(angle_deg: f64, prev: Phase, config: &PhaseThresholds) -> Result<Phase> {
    if !(0.0..=180.0).contains(&angle_deg) {
        return Err(Error::InvalidArgument(format!(
            "head angle {angle_deg} outside [0, 180]"
        )));
    }
    Ok(
        if angle_deg < config.threshold_deg - config.hysteresis_deg {
            Phase::Operation
        } else if angle_deg > config.threshold_deg + config.hysteresis_deg {
            Phase::Standby
        } else {
            prev
        },
    )
}

/// Where switching time is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StAnchorRule {
    /// First fixation on the object, falling back to Operation entry.
    FirstFixation,
    OperationEnter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub gsi_kind: GsiKind,
    pub backend: BackendConfig,
    /// Whether the operator sees the committed grasp and may correct it.
    pub feedback: bool,
    pub phase: PhaseThresholds,
    pub st_anchor: StAnchorRule,
    /// Leading slots of each set that are presented but not scored.
    pub warmup_slots: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            gsi_kind: GsiKind::IGsi,
            backend: BackendConfig::default(),
            feedback: true,
            phase: PhaseThresholds::default(),
            st_anchor: StAnchorRule::FirstFixation,
            warmup_slots: 1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.backend.dwell.validate()?;
        self.backend.panel.validate()?;
        let p = &self.phase;
        if !(p.hysteresis_deg >= 0.0 && p.hysteresis_deg < p.threshold_deg) {
            return Err(Error::InvalidConfig(format!(
                "hysteresis {} must be below the phase threshold {}",
                p.hysteresis_deg, p.threshold_deg
            )));
        }
        Ok(())
    }
}

/// Everything a session consumes, merged into one time-ordered stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SessionInput {
    Gsi(GsiInput),
    Phase(PhaseEvent),
    ObjectFixation { t: Millis },
}

impl SessionInput {
    pub fn t(&self) -> Millis {
        match self {
            SessionInput::Gsi(i) => i.t(),
            SessionInput::Phase(p) => p.t,
            SessionInput::ObjectFixation { t } => *t,
        }
    }
}

/// Observable consequences of one input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Effects {
    pub selection: Option<SelectionEvent>,
    pub dwell: Option<DwellUpdate>,
    /// Slot index of a trial window that just opened.
    pub opened: Option<u32>,
    pub trial: Option<TrialRecord>,
}

/// A closed Operation window, ready to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedTrial {
    pub set_index: u32,
    pub slot_index: u32,
    pub scored: bool,
    pub target_object: ObjectItem,
    pub t_operation_enter: Millis,
    pub t_operation_exit: Millis,
    pub first_fixation: Option<Millis>,
    pub selections: Vec<SelectionEvent>,
    /// Grasp latched by the interface when the window closed.
    pub final_grasp: Option<GraspType>,
    pub ncc_required: Option<u32>,
}

/// Scores one closed trial.
///
/// ST runs from the anchor to the last selection of the target grasp.
/// Intermediate FSM states are traversal, not errors, so they do not count
/// toward `error_count`.
pub fn score_trial(trial: &ClosedTrial, rule: StAnchorRule) -> TrialRecord {
    let target = trial.target_object.grasp;
    let last_correct = trial.selections.iter().rev().find(|s| s.grasp == target);
    let fixation = match rule {
        StAnchorRule::FirstFixation => trial.first_fixation,
        StAnchorRule::OperationEnter => None,
    };
    let (anchor, t0) = match (fixation, last_correct) {
        (Some(f), Some(sel)) if f <= sel.t => (StAnchor::Fixation, f),
        (Some(f), None) => (StAnchor::Fixation, f),
        _ => (StAnchor::OperationEnter, trial.t_operation_enter),
    };
    let st_seconds = last_correct.map(|sel| sel.t.saturating_sub(t0) as f64 / 1000.0);
    let error_count = match trial.selections.split_last() {
        Some((_, earlier)) => earlier
            .iter()
            .filter(|s| s.grasp != target && s.source != SelectionSource::Fsm)
            .count() as u32,
        None => 0,
    };
    TrialRecord {
        set_index: trial.set_index,
        slot_index: trial.slot_index,
        scored: trial.scored,
        target_object: trial.target_object.clone(),
        target_grasp: target,
        t_first_fixation: trial.first_fixation,
        t_operation_enter: trial.t_operation_enter,
        t_operation_exit: trial.t_operation_exit,
        selections: trial.selections.clone(),
        final_grasp: trial.final_grasp,
        st_seconds,
        st_anchor: anchor,
        correct: trial.final_grasp == Some(target),
        error_count,
        ncc_required: trial.ncc_required,
    }
}

#[derive(Debug, Clone)]
struct Window {
    slot: u32,
    t_enter: Millis,
    first_fixation: Option<Millis>,
    selections: Vec<SelectionEvent>,
    ncc_required: Option<u32>,
}

/// Live state of the dwell display, mirrored to clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelState {
    pub latched: Option<GraspType>,
    pub dwell: Option<DwellProgress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellProgress {
    pub icon: GraspType,
    pub progress: f64,
}

/// One experiment session over one sequence set.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    catalog: Catalog,
    set: SequenceSet,
    backend: Backend,
    phase: Phase,
    last_t: Option<Millis>,
    next_slot: u32,
    window: Option<Window>,
    dwell: Option<DwellProgress>,
    trials: Vec<TrialRecord>,
}

impl Session {
    pub fn new(config: SessionConfig, catalog: Catalog, set: SequenceSet) -> Result<Self> {
        config.validate()?;
        for &id in &set.slots {
            catalog.get(id)?;
        }
        let backend = Backend::new(config.gsi_kind, &config.backend)?;
        Ok(Self {
            config,
            catalog,
            set,
            backend,
            phase: Phase::Standby,
            last_t: None,
            next_slot: 0,
            window: None,
            dwell: None,
            trials: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn set(&self) -> &SequenceSet {
        &self.set
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn latched(&self) -> Option<GraspType> {
        self.backend.latched()
    }

    pub fn is_complete(&self) -> bool {
        self.window.is_none() && self.next_slot as usize >= self.set.slots.len()
    }

    /// Target object of the open trial, if any.
    pub fn current_target(&self) -> Option<&ObjectItem> {
        let w = self.window.as_ref()?;
        self.catalog.get(self.set.slots[w.slot as usize]).ok()
    }

    pub fn panel_state(&self) -> PanelState {
        PanelState {
            latched: self.latched(),
            dwell: self.dwell,
        }
    }

    pub fn apply(&mut self, input: SessionInput) -> Result<Effects> {
        let t = input.t();
        if let Some(last) = self.last_t {
            if t < last {
                return Err(Error::NonMonotonic { t, last });
            }
        }
        let effects = match input {
            SessionInput::Phase(e) => self.on_phase_event(e)?,
            SessionInput::Gsi(i) => self.route_input(&i)?,
            SessionInput::ObjectFixation { t } => {
                if let Some(w) = self.window.as_mut() {
                    w.first_fixation.get_or_insert(t);
                }
                Effects::default()
            }
        };
        self.last_t = Some(t);
        Ok(effects)
    }

    fn on_phase_event(&mut self, e: PhaseEvent) -> Result<Effects> {
        if e.phase == self.phase {
            return Err(Error::DuplicatePhase(e.phase));
        }
        let mut effects = Effects::default();
        match e.phase {
            Phase::Operation => {
                let slot = self.next_slot;
                let Some(&id) = self.set.slots.get(slot as usize) else {
                    return Err(Error::SequenceExhausted);
                };
                let target = self.catalog.grasp_of(id)?;
                let ncc_required = match (&self.backend, self.config.gsi_kind) {
                    (Backend::Fsm { state, order }, GsiKind::Fsm) => {
                        Some(order.distance(state.current, target))
                    }
                    _ => None,
                };
                self.window = Some(Window {
                    slot,
                    t_enter: e.t,
                    first_fixation: None,
                    selections: Vec::new(),
                    ncc_required,
                });
                effects.opened = Some(slot);
            }
            Phase::Standby => {
                let w = self
                    .window
                    .take()
                    .expect("Operation phase always has a window");
                let closed = ClosedTrial {
                    set_index: self.set.set_index,
                    slot_index: w.slot,
                    scored: w.slot >= self.config.warmup_slots,
                    target_object: self.catalog.get(self.set.slots[w.slot as usize])?.clone(),
                    t_operation_enter: w.t_enter,
                    t_operation_exit: e.t,
                    first_fixation: w.first_fixation,
                    selections: w.selections,
                    final_grasp: self.backend.latched(),
                    ncc_required: w.ncc_required,
                };
                let record = score_trial(&closed, self.config.st_anchor);
                self.trials.push(record.clone());
                self.next_slot += 1;
                effects.trial = Some(record);
            }
        }
        self.phase = e.phase;
        self.backend.interrupt();
        self.dwell = None;
        Ok(effects)
    }

    fn route_input(&mut self, input: &GsiInput) -> Result<Effects> {
        if input.accepted_by() != self.config.gsi_kind {
            return Err(Error::InputMismatch {
                kind: self.config.gsi_kind,
                input: input.name(),
            });
        }
        let Some(window) = self.window.as_mut() else {
            // Standby: the operator cannot see the target; inputs are only logged.
            return Ok(Effects::default());
        };
        let out = self.backend.handle(input)?;
        self.dwell = out.dwell.and_then(|d| {
            d.icon.map(|icon| DwellProgress {
                icon,
                progress: d.progress,
            })
        });
        let selection = out.selection.map(|mut s| {
            s.cause = if window.selections.is_empty() {
                SelectionCause::Commit
            } else {
                SelectionCause::Correction
            };
            window.selections.push(s);
            s
        });
        Ok(Effects {
            selection,
            dwell: out.dwell,
            ..Effects::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GazeSample;
    use crate::sequencer::generate_set;

    fn session(kind: GsiKind) -> Session {
        let catalog = Catalog::default();
        let set = generate_set(5, &catalog).unwrap();
        let config = SessionConfig {
            gsi_kind: kind,
            ..SessionConfig::default()
        };
        Session::new(config, catalog, set).unwrap()
    }

    fn phase(t: Millis, phase: Phase) -> SessionInput {
        SessionInput::Phase(PhaseEvent { t, phase })
    }

    #[test]
    fn classify_phase_examples() {
        let cfg = PhaseThresholds::default();
        for prev in [Phase::Standby, Phase::Operation] {
            assert_eq!(classify_phase(10.0, prev, &cfg).unwrap(), Phase::Operation);
            assert_eq!(classify_phase(170.0, prev, &cfg).unwrap(), Phase::Standby);
        }
        assert_eq!(
            classify_phase(95.0, Phase::Operation, &cfg).unwrap(),
            Phase::Operation
        );
        assert_eq!(
            classify_phase(95.0, Phase::Standby, &cfg).unwrap(),
            Phase::Standby
        );
        assert!(classify_phase(181.0, Phase::Standby, &cfg).is_err());
        assert!(classify_phase(-1.0, Phase::Standby, &cfg).is_err());
    }

    #[test]
    fn constant_angle_never_oscillates() {
        let cfg = PhaseThresholds::default();
        for a in 0..=180 {
            for start in [Phase::Standby, Phase::Operation] {
                let first = classify_phase(a as f64, start, &cfg).unwrap();
                let mut p = first;
                for _ in 0..5 {
                    p = classify_phase(a as f64, p, &cfg).unwrap();
                    assert_eq!(p, first);
                }
            }
        }
    }

    #[test]
    fn operation_window_opens_and_scores() {
        let mut s = session(GsiKind::App);
        let fx = s.apply(phase(5000, Phase::Operation)).unwrap();
        assert_eq!(fx.opened, Some(0));
        let target = s.current_target().unwrap().grasp;
        s.apply(SessionInput::ObjectFixation { t: 5100 }).unwrap();
        s.apply(SessionInput::Gsi(GsiInput::Tap {
            t: 5940,
            grasp: target,
        }))
        .unwrap();
        let fx = s.apply(phase(6500, Phase::Standby)).unwrap();
        let rec = fx.trial.unwrap();
        assert_eq!(rec.t_operation_enter, 5000);
        assert!(rec.correct);
        assert_eq!(rec.st_seconds, Some(0.84));
        assert_eq!(rec.st_anchor, StAnchor::Fixation);
        assert!(!rec.scored);
    }

    #[test]
    fn vacuous_trial() {
        let mut s = session(GsiKind::IGsi);
        s.apply(phase(100, Phase::Operation)).unwrap();
        let rec = s.apply(phase(900, Phase::Standby)).unwrap().trial.unwrap();
        assert!(!rec.correct);
        assert_eq!(rec.st_seconds, None);
        assert_eq!(rec.final_grasp, None);
    }

    #[test]
    fn standby_inputs_are_gated() {
        let mut s = session(GsiKind::App);
        let fx = s
            .apply(SessionInput::Gsi(GsiInput::Tap {
                t: 10,
                grasp: GraspType::Hook,
            }))
            .unwrap();
        assert!(fx.selection.is_none());
        assert_eq!(s.latched(), None);
        let err = s
            .apply(SessionInput::Gsi(GsiInput::CoContraction { t: 11 }))
            .unwrap_err();
        assert!(matches!(err, Error::InputMismatch { .. }));
    }

    #[test]
    fn gaze_dwell_in_operation_selects() {
        let mut s = session(GsiKind::IGsi);
        s.apply(phase(1000, Phase::Operation)).unwrap();
        let target = s.current_target().unwrap().grasp;
        let (x, y) = s.config().backend.panel.icon_rect(target).center();
        let mut selections = Vec::new();
        for k in 0..=30 {
            let t = 1100 + k * 10;
            let fx = s
                .apply(SessionInput::Gsi(GsiInput::Gaze(GazeSample {
                    t,
                    x,
                    y,
                    valid: true,
                })))
                .unwrap();
            selections.extend(fx.selection);
        }
        assert_eq!(selections.len(), 1);
        assert_eq!(selections[0].t, 1300);
        assert_eq!(selections[0].cause, SelectionCause::Commit);
        assert_eq!(s.panel_state().latched, Some(target));
    }

    #[test]
    fn duplicate_phase_and_exhaustion() {
        let mut s = session(GsiKind::Fsm);
        assert!(matches!(
            s.apply(phase(0, Phase::Standby)),
            Err(Error::DuplicatePhase(Phase::Standby))
        ));
        let mut t = 0;
        for _ in 0..24 {
            s.apply(phase(t, Phase::Operation)).unwrap();
            s.apply(phase(t + 10, Phase::Standby)).unwrap();
            t += 20;
        }
        assert!(s.is_complete());
        assert_eq!(s.trials().len(), 24);
        assert!(matches!(
            s.apply(phase(t, Phase::Operation)),
            Err(Error::SequenceExhausted)
        ));
        assert!(matches!(
            s.apply(phase(t - 100, Phase::Standby)),
            Err(Error::NonMonotonic { .. })
        ));
    }

    #[test]
    fn fsm_state_persists_and_counts_ncc() {
        let mut s = session(GsiKind::Fsm);
        let mut t = 0;
        let mut latched = GraspType::Cylindrical;
        for _ in 0..6 {
            s.apply(phase(t, Phase::Operation)).unwrap();
            let target = s.current_target().unwrap().grasp;
            let need = crate::domain::cycle_distance(latched, target);
            for k in 0..need {
                t += 1;
                s.apply(SessionInput::Gsi(GsiInput::CoContraction { t }))
                    .unwrap();
                let _ = k;
            }
            t += 1;
            let rec = s.apply(phase(t, Phase::Standby)).unwrap().trial.unwrap();
            assert_eq!(rec.ncc_required, Some(need));
            assert!(rec.correct);
            assert_eq!(rec.error_count, 0);
            assert_eq!(rec.selections.len() as u32, need);
            latched = target;
            t += 1;
        }
    }

    #[test]
    fn score_trial_examples() {
        let obj = ObjectItem {
            id: 12,
            name: "coin".into(),
            grasp: GraspType::Pinch,
        };
        let sel = |t, grasp| SelectionEvent {
            t,
            grasp,
            source: SelectionSource::Dwell,
            cause: SelectionCause::Commit,
        };
        let base = ClosedTrial {
            set_index: 1,
            slot_index: 3,
            scored: true,
            target_object: obj,
            t_operation_enter: 9500,
            t_operation_exit: 12000,
            first_fixation: Some(10_000),
            selections: vec![
                sel(10_400, GraspType::Tripod),
                sel(10_840, GraspType::Pinch),
            ],
            final_grasp: Some(GraspType::Pinch),
            ncc_required: None,
        };
        let r = score_trial(&base, StAnchorRule::FirstFixation);
        assert!(r.correct);
        assert_eq!(r.error_count, 1);
        assert_eq!(r.st_seconds, Some(0.84));
        let r = score_trial(&base, StAnchorRule::OperationEnter);
        assert_eq!(r.st_seconds, Some(1.34));
        assert_eq!(r.st_anchor, StAnchor::OperationEnter);

        let wrong = ClosedTrial {
            selections: vec![sel(10_400, GraspType::Tripod)],
            final_grasp: Some(GraspType::Tripod),
            ..base
        };
        let r = score_trial(&wrong, StAnchorRule::FirstFixation);
        assert!(!r.correct);
        assert_eq!(r.st_seconds, None);
    }
}
