//! Dwell-based gaze selection on the grasp panel.
//!
//! The engine hit-tests every gaze sample against the six panel icons and
//! tracks the current same-icon span. A span continues while consecutive
//! valid samples land on the same icon with inter-sample gaps no larger than
//! `gap_tolerance_ms`. A selection is emitted once per span, at the first
//! sample whose time since span entry reaches `threshold_ms`. Leaving the
//! icon, losing tracking or an over-tolerance gap ends the span; a new span
//! (re-entry) re-arms the engine.

use serde::{Deserialize, Serialize};

use crate::domain::{
    GazeSample, GraspType, Millis, SelectionCause, SelectionEvent, SelectionSource,
};
use crate::error::{Error, Result};

/// Axis-aligned rectangle in panel centimeters, min-inclusive and max-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

/// Geometry of the grasp panel: a grid of square icons in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelLayout {
    pub icon_size_cm: f64,
    pub gap_cm: f64,
    pub rows: usize,
    pub cols: usize,
    /// Panel coordinate of the top-left corner of the first icon.
    pub origin: (f64, f64),
    /// Grasp type of each grid cell, row-major.
    pub order: Vec<GraspType>,
}

impl Default for PanelLayout {
    fn default() -> Self {
        Self {
            icon_size_cm: 2.5,
            gap_cm: 0.5,
            rows: 2,
            cols: 3,
            origin: (0.0, 0.0),
            order: GraspType::ALL.to_vec(),
        }
    }
}

impl PanelLayout {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("panel layout: {msg}")));
        if !(self.icon_size_cm.is_finite() && self.icon_size_cm > 0.0) {
            return bad(format!("icon size {} must be positive", self.icon_size_cm));
        }
        if !(self.gap_cm.is_finite() && self.gap_cm >= 0.0) {
            return bad(format!("gap {} must be non-negative", self.gap_cm));
        }
        if !(self.origin.0.is_finite() && self.origin.1.is_finite()) {
            return bad("origin must be finite".into());
        }
        if self.rows * self.cols != GraspType::ALL.len() {
            return bad(format!(
                "{}x{} grid does not hold six icons",
                self.rows, self.cols
            ));
        }
        if self.order.len() != 6 {
            return bad(format!("{} icons listed, expected 6", self.order.len()));
        }
        for g in GraspType::ALL {
            if self.order.iter().filter(|&&o| o == g).count() != 1 {
                return bad(format!("{g} must appear exactly once"));
            }
        }
        Ok(())
    }

    /// Rectangle of the icon at grid cell `cell` (row-major).
    pub fn cell_rect(&self, cell: usize) -> Rect {
        let pitch = self.icon_size_cm + self.gap_cm;
        let (row, col) = (cell / self.cols, cell % self.cols);
        let x0 = self.origin.0 + col as f64 * pitch;
        let y0 = self.origin.1 + row as f64 * pitch;
        Rect {
            x0,
            y0,
            x1: x0 + self.icon_size_cm,
            y1: y0 + self.icon_size_cm,
        }
    }

    pub fn icon_rect(&self, grasp: GraspType) -> Rect {
        let cell = self
            .order
            .iter()
            .position(|&g| g == grasp)
            .expect("validated layout lists every grasp");
        self.cell_rect(cell)
    }

    pub fn icons(&self) -> impl Iterator<Item = (GraspType, Rect)> + '_ {
        self.order
            .iter()
            .enumerate()
            .map(|(cell, &g)| (g, self.cell_rect(cell)))
    }

    /// Bounding box of the whole panel.
    pub fn bounds(&self) -> Rect {
        let pitch = self.icon_size_cm + self.gap_cm;
        Rect {
            x0: self.origin.0,
            y0: self.origin.1,
            x1: self.origin.0 + (self.cols - 1) as f64 * pitch + self.icon_size_cm,
            y1: self.origin.1 + (self.rows - 1) as f64 * pitch + self.icon_size_cm,
        }
    }
}

/// The icon containing `(x, y)`, if any.
pub fn hit_test(layout: &PanelLayout, x: f64, y: f64) -> Option<GraspType> {
    layout
        .icons()
        .find(|(_, rect)| rect.contains(x, y))
        .map(|(g, _)| g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RearmPolicy {
    /// The same icon can only be selected again after the gaze leaves and re-enters it.
    ExitAndReenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwellConfig {
    pub threshold_ms: Millis,
    pub gap_tolerance_ms: Millis,
    pub rearm: RearmPolicy,
}

impl Default for DwellConfig {
    fn default() -> Self {
        Self {
            threshold_ms: 200,
            gap_tolerance_ms: 100,
            rearm: RearmPolicy::ExitAndReenter,
        }
    }
}

impl DwellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_ms == 0 {
            return Err(Error::InvalidConfig(
                "dwell threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DwellState {
    pub current_icon: Option<GraspType>,
    pub dwell_enter_t: Option<Millis>,
    /// Last committed selection.
    pub latched: Option<GraspType>,
    /// Whether the current span may still emit a selection.
    pub armed: bool,
    pub last_t: Option<Millis>,
}

/// Result of feeding one gaze sample to the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellUpdate {
    pub selection: Option<SelectionEvent>,
    pub icon: Option<GraspType>,
    /// Accumulated dwell relative to the threshold, clamped to 1.
    pub progress: f64,
}

/// Pure transition function of the dwell engine.
pub fn ingest_gaze(
    state: &DwellState,
    sample: &GazeSample,
    config: &DwellConfig,
    layout: &PanelLayout,
) -> Result<(DwellState, DwellUpdate)> {
    if let Some(last) = state.last_t {
        if sample.t <= last {
            return Err(Error::NonMonotonic { t: sample.t, last });
        }
    }
    let mut next = *state;
    next.last_t = Some(sample.t);

    let hit = if sample.valid {
        hit_test(layout, sample.x, sample.y)
    } else {
        None
    };
    let Some(icon) = hit else {
        next.current_icon = None;
        next.dwell_enter_t = None;
        next.armed = false;
        return Ok((
            next,
            DwellUpdate {
                selection: None,
                icon: None,
                progress: 0.0,
            },
        ));
    };

    let continues = state.current_icon == Some(icon)
        && state
            .last_t
            .is_some_and(|last| sample.t - last <= config.gap_tolerance_ms);
    if !continues {
        next.current_icon = Some(icon);
        next.dwell_enter_t = Some(sample.t);
        next.armed = true;
    }

    let enter = next.dwell_enter_t.expect("span has an entry time");
    let elapsed = sample.t - enter;
    let mut selection = None;
    if next.armed && elapsed >= config.threshold_ms {
        next.armed = false;
        next.latched = Some(icon);
        selection = Some(SelectionEvent {
            t: sample.t,
            grasp: icon,
            source: SelectionSource::Dwell,
            cause: SelectionCause::Commit,
        });
    }
    let progress = (elapsed as f64 / config.threshold_ms as f64).min(1.0);
    Ok((
        next,
        DwellUpdate {
            selection,
            icon: Some(icon),
            progress,
        },
    ))
}

/// Stateful wrapper over [`ingest_gaze`], one per session.
#[derive(Debug, Clone)]
pub struct DwellEngine {
    config: DwellConfig,
    layout: PanelLayout,
    state: DwellState,
}

impl DwellEngine {
    pub fn new(config: DwellConfig, layout: PanelLayout) -> Result<Self> {
        config.validate()?;
        layout.validate()?;
        Ok(Self {
            config,
            layout,
            state: DwellState::default(),
        })
    }

    pub fn ingest(&mut self, sample: &GazeSample) -> Result<DwellUpdate> {
        let (state, update) = ingest_gaze(&self.state, sample, &self.config, &self.layout)?;
        self.state = state;
        Ok(update)
    }

    /// Ends the current span without touching the latched grasp.
    pub fn break_span(&mut self) {
        self.state.current_icon = None;
        self.state.dwell_enter_t = None;
        self.state.armed = false;
    }

    pub fn state(&self) -> &DwellState {
        &self.state
    }

    pub fn latched(&self) -> Option<GraspType> {
        self.state.latched
    }

    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    pub fn config(&self) -> &DwellConfig {
        &self.config
    }
}
