//! Synthetic operators. A [`UserModel`] turns each presented object into a
//! timed stream of operator inputs for the active interface, which is then
//! fed through a recording session exactly as live input would be.
//!
//! Component times are lognormal with a given median; `sigma = 0` makes a
//! component deterministic. An optional practice decay scales the operator's
//! search and motor times by `set_index^log2(b)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{
    pattern_for, pr_recognize, BackendConfig, Confusion, EmgPattern, GsiInput, GsiKind,
    PrErrorModel,
};
use crate::domain::{Catalog, GazeSample, GraspType, Millis, Phase, PhaseEvent};
use crate::dwell::hit_test;
use crate::error::{Error, Result};
use crate::log::{Recorder, SessionLog};
use crate::rng::rng_for;
use crate::sequencer::{SequenceSet, SuiteFile};
use crate::session::{SessionConfig, SessionInput};

/// A positive duration drawn from a lognormal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_s: f64,
    pub sigma: f64,
}

impl Timing {
    pub const fn fixed(seconds: f64) -> Self {
        Self {
            median_s: seconds,
            sigma: 0.0,
        }
    }

    pub const fn lognormal(median_s: f64, sigma: f64) -> Self {
        Self { median_s, sigma }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.median_s.is_finite() && self.median_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{name}: median {} must be positive",
                self.median_s
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{name}: sigma {} must be non-negative",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.median_s;
        }
        LogNormal::new(self.median_s.ln(), self.sigma)
            .expect("validated timing")
            .sample(rng)
    }

    fn scaled(self, factor: f64) -> Self {
        Self {
            median_s: self.median_s * factor,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserModel {
    /// Operation entry to first fixation on the object.
    pub orient: Timing,
    /// First fixation on the object to the start of the switching action.
    pub visual_search: Timing,
    /// How long the gaze rests on an icon (i-GSI). Not affected by practice.
    pub dwell_fixation: Timing,
    /// Interval before each co-contraction (FSM).
    pub cocontraction: Timing,
    /// Time to form each pattern (PR).
    pub pattern_formation: BTreeMap<EmgPattern, Timing>,
    /// Time to reach and press a button (APP).
    pub tap: Timing,
    /// Time to notice a wrong or missing selection before acting again.
    pub correction_latency: Timing,
    /// Last action to leaving the Operation phase.
    pub linger: Timing,
    /// Time spent in Standby between objects.
    pub standby: Timing,
    /// Probability that a pattern is misrecognized (PR).
    pub pattern_error_prob: f64,
    pub pattern_confusion: Confusion,
    /// Probability that the first action of an attempt picks a wrong grasp:
    /// a fixation on the wrong icon, one co-contraction too many, or a mistap.
    pub slip_prob: f64,
    /// Corrective attempts allowed after the first one, when feedback is on.
    pub max_corrections: u32,
    pub gaze_rate_hz: f64,
    /// Learning efficiency `b` of a practice decay, if any.
    pub practice_b: Option<f64>,
}

impl Default for UserModel {
    fn default() -> Self {
        let pattern = Timing::lognormal(0.485, 0.25);
        Self {
            orient: Timing::lognormal(0.25, 0.2),
            visual_search: Timing::lognormal(0.645, 0.25),
            dwell_fixation: Timing::lognormal(0.35, 0.2),
            cocontraction: Timing::lognormal(0.625, 0.25),
            pattern_formation: [
                EmgPattern::WaveIn,
                EmgPattern::WaveOut,
                EmgPattern::Fist,
                EmgPattern::FingersSpread,
                EmgPattern::DoubleTap,
                EmgPattern::Synthetic,
            ]
            .into_iter()
            .map(|p| (p, pattern))
            .collect(),
            tap: Timing::lognormal(0.34, 0.25),
            correction_latency: Timing::lognormal(0.45, 0.25),
            linger: Timing::lognormal(0.4, 0.2),
            standby: Timing::lognormal(1.5, 0.2),
            pattern_error_prob: 0.02,
            pattern_confusion: Confusion::UniformOthers,
            slip_prob: 0.01,
            max_corrections: 3,
            gaze_rate_hz: 60.0,
            practice_b: None,
        }
    }
}

impl UserModel {
    /// A model with every component fixed at its median and no errors.
    pub fn deterministic() -> Self {
        let mut m = Self::default();
        for t in m.timings_mut() {
            t.sigma = 0.0;
        }
        m.pattern_error_prob = 0.0;
        m.slip_prob = 0.0;
        m
    }

    fn timings_mut(&mut self) -> impl Iterator<Item = &mut Timing> {
        [
            &mut self.orient,
            &mut self.visual_search,
            &mut self.dwell_fixation,
            &mut self.cocontraction,
            &mut self.tap,
            &mut self.correction_latency,
            &mut self.linger,
            &mut self.standby,
        ]
        .into_iter()
        .chain(self.pattern_formation.values_mut())
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("orient", &self.orient),
            ("visual_search", &self.visual_search),
            ("dwell_fixation", &self.dwell_fixation),
            ("cocontraction", &self.cocontraction),
            ("tap", &self.tap),
            ("correction_latency", &self.correction_latency),
            ("linger", &self.linger),
            ("standby", &self.standby),
        ];
        for (name, t) in named {
            t.validate(name)?;
        }
        for (p, t) in &self.pattern_formation {
            t.validate(&format!("pattern_formation.{p:?}"))?;
        }
        for (name, p) in [
            ("pattern_error_prob", self.pattern_error_prob),
            ("slip_prob", self.slip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        self.pr_errors().validate()?;
        if !(self.gaze_rate_hz > 0.0 && self.gaze_rate_hz <= 1000.0) {
            return Err(Error::InvalidConfig(format!(
                "gaze rate {} Hz outside (0, 1000]",
                self.gaze_rate_hz
            )));
        }
        if let Some(b) = self.practice_b {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "practice b {b} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Multiplier applied to search and motor times in the given set.
    pub fn practice_factor(&self, set_index: u32) -> f64 {
        match self.practice_b {
            Some(b) => f64::from(set_index.max(1)).powf(b.log2()),
            None => 1.0,
        }
    }

    /// The same operator with all search, motor and correction medians scaled.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.visual_search = m.visual_search.scaled(factor);
        m.cocontraction = m.cocontraction.scaled(factor);
        m.tap = m.tap.scaled(factor);
        m.correction_latency = m.correction_latency.scaled(factor);
        for t in m.pattern_formation.values_mut() {
            *t = t.scaled(factor);
        }
        m
    }

    fn pr_errors(&self) -> PrErrorModel {
        PrErrorModel {
            error_prob: self.pattern_error_prob,
            confusion: self.pattern_confusion.clone(),
            rng_seed: 0,
        }
    }

    fn pattern_time(&self, pattern: EmgPattern) -> Result<Timing> {
        self.pattern_formation
            .get(&pattern)
            .copied()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("no pattern formation time for {pattern:?}"))
            })
    }
}

fn ms(seconds: f64) -> Millis {
    (seconds * 1000.0).round().max(1.0) as Millis
}

/// One object presentation, from the operator's point of view.
#[derive(Debug, Clone, Copy)]
pub struct TrialSpec<'a> {
    pub kind: GsiKind,
    pub backend: &'a BackendConfig,
    pub feedback: bool,
    pub target: GraspType,
    /// Grasp latched when the Operation window opens.
    pub prior: Option<GraspType>,
    pub t_operation: Millis,
    pub set_index: u32,
}

/// Inputs for one trial, from Operation entry through the return to Standby.
pub fn simulate_trial<R: Rng + ?Sized>(
    model: &UserModel,
    spec: &TrialSpec,
    rng: &mut R,
) -> Result<Vec<SessionInput>> {
    if spec.kind == GsiKind::Pr {
        pattern_for(spec.target, &spec.backend.pr)?;
    }
    let practice = model.practice_factor(spec.set_index);
    let mut actor = Actor {
        model,
        spec,
        practice,
        latched: spec.prior,
        inputs: Vec::new(),
    };
    actor.inputs.push(SessionInput::Phase(PhaseEvent {
        t: spec.t_operation,
        phase: Phase::Operation,
    }));
    let fixation = spec.t_operation + ms(model.orient.sample(rng));
    actor
        .inputs
        .push(SessionInput::ObjectFixation { t: fixation });
    let mut t = fixation + ms(model.visual_search.sample(rng) * practice);
    for attempt in 0..=model.max_corrections {
        if attempt > 0 {
            t += ms(model.correction_latency.sample(rng) * practice);
        }
        t = actor.attempt(t, rng)?;
        if actor.latched == Some(spec.target) || !spec.feedback {
            break;
        }
    }
    let t_exit = t + ms(model.linger.sample(rng));
    actor.inputs.push(SessionInput::Phase(PhaseEvent {
        t: t_exit,
        phase: Phase::Standby,
    }));
    Ok(actor.inputs)
}

struct Actor<'a> {
    model: &'a UserModel,
    spec: &'a TrialSpec<'a>,
    practice: f64,
    latched: Option<GraspType>,
    inputs: Vec<SessionInput>,
}

impl Actor<'_> {
    fn slip<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.model.slip_prob > 0.0 && rng.random_bool(self.model.slip_prob)
    }

    fn other_than<R: Rng + ?Sized>(target: GraspType, rng: &mut R) -> GraspType {
        let others: Vec<GraspType> = GraspType::ALL
            .into_iter()
            .filter(|&g| g != target)
            .collect();
        others[rng.random_range(0..others.len())]
    }

    fn push(&mut self, input: GsiInput) {
        self.inputs.push(SessionInput::Gsi(input));
    }

    /// One switching attempt starting at `t`; returns the time of its last input.
    fn attempt<R: Rng + ?Sized>(&mut self, start: Millis, rng: &mut R) -> Result<Millis> {
        let target = self.spec.target;
        let mut t = start;
        match self.spec.kind {
            GsiKind::IGsi => {
                let icon = if self.slip(rng) {
                    Self::other_than(target, rng)
                } else {
                    target
                };
                t = self.fixate(icon, start, rng);
            }
            GsiKind::Fsm => {
                let order = &self.spec.backend.cycle_order;
                let mut state = self.latched.unwrap_or(self.spec.backend.fsm_initial);
                let mut n = order.distance(state, target);
                if n > 0 && self.slip(rng) {
                    n += 1;
                }
                for _ in 0..n {
                    t += ms(self.model.cocontraction.sample(rng) * self.practice);
                    self.push(GsiInput::CoContraction { t });
                    state = order.next(state);
                }
                self.latched = Some(state);
            }
            GsiKind::Pr => {
                let pr = &self.spec.backend.pr;
                let intended = pattern_for(target, pr)?;
                t += ms(self.model.pattern_time(intended)?.sample(rng) * self.practice);
                let recognized = pr_recognize(target, &self.model.pr_errors(), pr, rng)?;
                let label = pattern_for(recognized, pr)?;
                self.push(GsiInput::EmgPattern { t, label });
                self.latched = Some(recognized);
            }
            GsiKind::App => {
                let grasp = if self.slip(rng) {
                    Self::other_than(target, rng)
                } else {
                    target
                };
                t += ms(self.model.tap.sample(rng) * self.practice);
                self.push(GsiInput::Tap { t, grasp });
                self.latched = Some(grasp);
            }
        }
        Ok(t)
    }

    /// Rests the gaze on `icon` for one fixation, then looks back at the object.
    fn fixate<R: Rng + ?Sized>(&mut self, icon: GraspType, start: Millis, rng: &mut R) -> Millis {
        let layout = &self.spec.backend.panel;
        let (x, y) = layout.icon_rect(icon).center();
        let hold = ms(self.model.dwell_fixation.sample(rng));
        let period = 1000.0 / self.model.gaze_rate_hz;
        let threshold = self.spec.backend.dwell.threshold_ms;
        let mut last = start;
        for k in 0.. {
            let offset = (k as f64 * period).round() as Millis;
            if offset > hold {
                break;
            }
            last = start + offset;
            self.push(GsiInput::Gaze(GazeSample {
                t: last,
                x,
                y,
                valid: true,
            }));
            if offset >= threshold {
                self.latched = Some(icon);
            }
        }
        let away = layout.bounds();
        let (ox, oy) = (away.x1 + 5.0, away.center().1);
        debug_assert!(hit_test(layout, ox, oy).is_none());
        last += (period.round() as Millis).max(1);
        self.push(GsiInput::Gaze(GazeSample {
            t: last,
            x: ox,
            y: oy,
            valid: true,
        }));
        last
    }
}

/// Runs one sequence set through a recording session.
pub fn simulate_session<R: Rng + ?Sized>(
    model: &UserModel,
    config: &SessionConfig,
    catalog: &Catalog,
    set: &SequenceSet,
    subject_id: &str,
    suite_seed: Option<u64>,
    rng: &mut R,
) -> Result<SessionLog> {
    model.validate()?;
    let mut recorder = Recorder::new(
        config.clone(),
        catalog.clone(),
        set.clone(),
        subject_id,
        suite_seed,
    )?;
    let mut t: Millis = 0;
    for &id in &set.slots {
        let t_operation = t + ms(model.standby.sample(rng));
        let spec = TrialSpec {
            kind: config.gsi_kind,
            backend: &config.backend,
            feedback: config.feedback,
            target: catalog.grasp_of(id)?,
            prior: recorder.session().latched(),
            t_operation,
            set_index: set.set_index,
        };
        for input in simulate_trial(model, &spec, rng)? {
            t = input.t();
            recorder.apply(input)?;
        }
    }
    Ok(recorder.into_log())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_subjects: u32,
    pub gsis: Vec<GsiKind>,
    pub feedback: bool,
    pub seed: u64,
    /// Between-subject spread: each subject's search and motor medians are
    /// scaled by `exp(N(0, subject_spread))`.
    pub subject_spread: f64,
    /// Template for every session; kind and feedback are filled in per run.
    pub session: SessionConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut session = SessionConfig::default();
        session.backend.pr.synthetic_hook_pattern = true;
        Self {
            n_subjects: 8,
            gsis: GsiKind::ALL.to_vec(),
            feedback: true,
            seed: 0,
            subject_spread: 0.1,
            session,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::InvalidConfig(
                "at least one subject is required".into(),
            ));
        }
        if self.gsis.is_empty() {
            return Err(Error::InvalidConfig("no interfaces selected".into()));
        }
        if !(self.subject_spread.is_finite() && self.subject_spread >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "subject spread {} must be non-negative",
                self.subject_spread
            )));
        }
        self.session.validate()
    }
}

const SUBJECT_STREAM: u64 = 0x5b_1ec7;

/// One model per subject: `base` scaled by a per-subject factor.
pub fn subject_models(sim: &SimConfig, base: &UserModel) -> Vec<UserModel> {
    (0..sim.n_subjects)
        .map(|s| {
            if sim.subject_spread == 0.0 {
                return base.clone();
            }
            let mut rng = rng_for(sim.seed, &[SUBJECT_STREAM, u64::from(s)]);
            let factor = LogNormal::new(0.0, sim.subject_spread)
                .expect("validated spread")
                .sample(&mut rng);
            base.scaled(factor)
        })
        .collect()
}

pub fn subject_id(index: u32) -> String {
    format!("S{:02}", index + 1)
}

/// Simulates every (subject, interface, set) session of a suite. Sessions are
/// independent and seeded from their key, so the output does not depend on
/// scheduling; logs come back ordered by subject, then interface, then set.
pub fn run_experiment(
    sim: &SimConfig,
    suite: &SuiteFile,
    models: &[UserModel],
) -> Result<Vec<SessionLog>> {
    sim.validate()?;
    if models.len() != sim.n_subjects as usize {
        return Err(Error::InvalidArgument(format!(
            "{} user models for {} subjects",
            models.len(),
            sim.n_subjects
        )));
    }
    for m in models {
        m.validate()?;
    }
    let sets = suite.sequence_sets();
    let mut keys = Vec::new();
    for subject in 0..sim.n_subjects {
        for &kind in &sim.gsis {
            for set in &sets {
                keys.push((subject, kind, set));
            }
        }
    }
    keys.into_par_iter()
        .map(|(subject, kind, set)| {
            let mut config = sim.session.clone();
            config.gsi_kind = kind;
            config.feedback = sim.feedback;
            config.backend.cycle_order = suite.config.cycle_order;
            config.backend.fsm_initial = suite.config.initial();
            let kind_index = GsiKind::ALL.iter().position(|&k| k == kind).unwrap_or(0);
            let mut rng = rng_for(
                sim.seed,
                &[
                    u64::from(subject),
                    kind_index as u64,
                    u64::from(set.set_index),
                ],
            );
            simulate_session(
                &models[subject as usize],
                &config,
                &suite.catalog,
                set,
                &subject_id(subject),
                Some(suite.config.seed),
                &mut rng,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::replay;
    use crate::sequencer::{generate_set, SuiteConfig};

    fn trial_st(
        model: &UserModel,
        kind: GsiKind,
        target: GraspType,
        prior: Option<GraspType>,
    ) -> Option<f64> {
        let catalog = Catalog::default();
        let set = generate_set(1, &catalog).unwrap();
        let mut config = SessionConfig {
            gsi_kind: kind,
            warmup_slots: 0,
            ..SessionConfig::default()
        };
        config.backend.pr.synthetic_hook_pattern = true;
        if let Some(p) = prior {
            config.backend.fsm_initial = p;
        }
        let mut recorder = Recorder::new(config.clone(), catalog, set, "S01", None).unwrap();
        let spec = TrialSpec {
            kind,
            backend: &config.backend,
            feedback: config.feedback,
            target,
            prior: recorder.session().latched(),
            t_operation: 1000,
            set_index: 1,
        };
        let mut rng = rng_for(0, &[]);
        for input in simulate_trial(model, &spec, &mut rng).unwrap() {
            recorder.apply(input).unwrap();
        }
        let trial = recorder.session().trials()[0].clone();
        assert_eq!(trial.correct, trial.final_grasp == Some(target));
        trial.st_seconds
    }

    #[test]
    fn deterministic_igsi_is_search_plus_threshold() {
        let mut model = UserModel::deterministic();
        model.visual_search = Timing::fixed(0.3);
        model.dwell_fixation = Timing::fixed(0.2);
        assert_eq!(
            trial_st(&model, GsiKind::IGsi, GraspType::Pinch, None),
            Some(0.5)
        );
    }

    #[test]
    fn deterministic_fsm_is_search_plus_ncc_contractions() {
        let mut model = UserModel::deterministic();
        model.visual_search = Timing::fixed(0.3);
        model.cocontraction = Timing::fixed(0.9);
        let st = trial_st(
            &model,
            GsiKind::Fsm,
            GraspType::Pinch,
            Some(GraspType::Cylindrical),
        );
        assert!((st.unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn short_fixation_does_not_select() {
        let mut model = UserModel::deterministic();
        model.dwell_fixation = Timing::fixed(0.15);
        model.max_corrections = 0;
        assert_eq!(trial_st(&model, GsiKind::IGsi, GraspType::Hook, None), None);
    }

    #[test]
    fn pr_always_wrong_without_feedback_fails() {
        let catalog = Catalog::default();
        let set = generate_set(3, &catalog).unwrap();
        let mut model = UserModel::deterministic();
        model.pattern_error_prob = 1.0;
        let mut config = SimConfig::default().session;
        config.gsi_kind = GsiKind::Pr;
        config.feedback = false;
        let mut rng = rng_for(9, &[]);
        let log = simulate_session(&model, &config, &catalog, &set, "S01", None, &mut rng).unwrap();
        let trials: Vec<_> = log.trials().filter(|t| t.scored).collect();
        assert_eq!(trials.len(), 23);
        assert!(trials.iter().all(|t| !t.correct));
    }

    #[test]
    fn hook_is_unreachable_by_stock_pr() {
        let backend = BackendConfig::default();
        let spec = TrialSpec {
            kind: GsiKind::Pr,
            backend: &backend,
            feedback: true,
            target: GraspType::Hook,
            prior: None,
            t_operation: 0,
            set_index: 1,
        };
        let err = simulate_trial(&UserModel::default(), &spec, &mut rng_for(0, &[])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedGrasp(GraspType::Hook)));
    }

    #[test]
    fn one_session_has_23_scored_trials_and_replays() {
        let suite = SuiteFile::build(
            &SuiteConfig {
                n_sets: 1,
                balance_tolerance: 0.9,
                seed: 4,
                ..SuiteConfig::default()
            },
            &Catalog::default(),
        )
        .unwrap();
        for kind in GsiKind::ALL {
            let sim = SimConfig {
                n_subjects: 1,
                gsis: vec![kind],
                seed: 11,
                ..SimConfig::default()
            };
            let models = subject_models(&sim, &UserModel::default());
            let logs = run_experiment(&sim, &suite, &models).unwrap();
            assert_eq!(logs.len(), 1);
            assert_eq!(logs[0].trials().filter(|t| t.scored).count(), 23);
            assert!(replay(&logs[0]).unwrap().is_identical());
            assert_eq!(logs, run_experiment(&sim, &suite, &models).unwrap());
        }
    }

    #[test]
    fn practice_factor_halves_per_doubling_at_b_half() {
        let model = UserModel {
            practice_b: Some(0.5),
            ..UserModel::default()
        };
        assert_eq!(model.practice_factor(1), 1.0);
        assert!((model.practice_factor(2) - 0.5).abs() < 1e-12);
        assert!((model.practice_factor(8) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip() {
        let model = UserModel::default();
        let text = serde_json::to_string(&model).unwrap();
        assert_eq!(serde_json::from_str::<UserModel>(&text).unwrap(), model);
    }
}
