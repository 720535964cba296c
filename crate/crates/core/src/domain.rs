//! Shared vocabulary: grasp types and their cycle order, the object catalog,
//! gaze samples, selection and phase events, and scored trial records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Milliseconds since session start.
pub type Millis = u64;

/// One of the six grasp types a prosthesis can be switched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GraspType {
    Cylindrical,
    Spherical,
    Tripod,
    Pinch,
    Lateral,
    Hook,
}

impl GraspType {
    /// All grasp types in canonical cycle order.
    pub const ALL: [GraspType; 6] = [
        GraspType::Cylindrical,
        GraspType::Spherical,
        GraspType::Tripod,
        GraspType::Pinch,
        GraspType::Lateral,
        GraspType::Hook,
    ];

    /// Position in the canonical cycle order (Cylindrical = 0 ... Hook = 5).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<GraspType> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GraspType::Cylindrical => "Cylindrical",
            GraspType::Spherical => "Spherical",
            GraspType::Tripod => "Tripod",
            GraspType::Pinch => "Pinch",
            GraspType::Lateral => "Lateral",
            GraspType::Hook => "Hook",
        }
    }
}

impl fmt::Display for GraspType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraspType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GraspType::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown grasp type `{s}`")))
    }
}

/// The order in which a sequential (FSM) interface steps through grasp types.
///
/// Serialized as the list of six grasp names. The default is the canonical
/// order Cylindrical, Spherical, Tripod, Pinch, Lateral, Hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GraspType>", into = "Vec<GraspType>")]
pub struct CycleOrder {
    order: [GraspType; 6],
    position: [usize; 6],
}

impl CycleOrder {
    pub fn new(order: [GraspType; 6]) -> Result<Self> {
        let mut position = [usize::MAX; 6];
        for (pos, grasp) in order.iter().enumerate() {
            if position[grasp.index()] != usize::MAX {
                return Err(Error::InvalidConfig(format!(
                    "cycle order lists {grasp} twice"
                )));
            }
            position[grasp.index()] = pos;
        }
        Ok(Self { order, position })
    }

    pub fn grasps(&self) -> &[GraspType; 6] {
        &self.order
    }

    pub fn position(&self, grasp: GraspType) -> usize {
        self.position[grasp.index()]
    }

    /// The grasp reached by one step forward from `grasp`, wrapping after the last.
    pub fn next(&self, grasp: GraspType) -> GraspType {
        self.order[(self.position(grasp) + 1) % 6]
    }

    /// Number of forward steps needed to get from `from` to `to` (0..=5).
    pub fn distance(&self, from: GraspType, to: GraspType) -> u32 {
        ((self.position(to) + 6 - self.position(from)) % 6) as u32
    }
}

impl Default for CycleOrder {
    fn default() -> Self {
        Self::new(GraspType::ALL).expect("canonical order is a permutation")
    }
}

impl TryFrom<Vec<GraspType>> for CycleOrder {
    type Error = Error;

    fn try_from(value: Vec<GraspType>) -> Result<Self> {
        let order: [GraspType; 6] = value.try_into().map_err(|v: Vec<GraspType>| {
            Error::InvalidConfig(format!("cycle order needs 6 grasp types, got {}", v.len()))
        })?;
        Self::new(order)
    }
}

impl From<CycleOrder> for Vec<GraspType> {
    fn from(value: CycleOrder) -> Self {
        value.order.to_vec()
    }
}

/// Forward steps from `from` to `to` in the canonical cycle order.
pub fn cycle_distance(from: GraspType, to: GraspType) -> u32 {
    CycleOrder::default().distance(from, to)
}

/// A physical object presented to the subject, grasped with exactly one grasp type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectItem {
    pub id: u32,
    pub name: String,
    pub grasp: GraspType,
}

/// The set of target objects used to build presentation sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ObjectItem>", into = "Vec<ObjectItem>")]
pub struct Catalog {
    objects: Vec<ObjectItem>,
}

impl Catalog {
    /// Builds a catalog, rejecting duplicate ids and empty names.
    pub fn new(mut objects: Vec<ObjectItem>) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::InvalidCatalog("catalog is empty".into()));
        }
        objects.sort_by_key(|o| o.id);
        for pair in objects.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidCatalog(format!(
                    "object id {} appears twice",
                    pair[0].id
                )));
            }
        }
        if let Some(o) = objects.iter().find(|o| o.name.trim().is_empty()) {
            return Err(Error::InvalidCatalog(format!(
                "object {} has no name",
                o.id
            )));
        }
        Ok(Self { objects })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn objects(&self) -> &[ObjectItem] {
        &self.objects
    }

    pub fn get(&self, id: u32) -> Result<&ObjectItem> {
        self.objects
            .binary_search_by_key(&id, |o| o.id)
            .map(|i| &self.objects[i])
            .map_err(|_| Error::UnknownObject(id))
    }

    pub fn grasp_of(&self, id: u32) -> Result<GraspType> {
        self.get(id).map(|o| o.grasp)
    }

    /// Objects of the catalog grouped by grasp type, in id order.
    pub fn by_grasp(&self) -> BTreeMap<GraspType, Vec<&ObjectItem>> {
        let mut map: BTreeMap<GraspType, Vec<&ObjectItem>> = BTreeMap::new();
        for o in &self.objects {
            map.entry(o.grasp).or_default().push(o);
        }
        map
    }

    pub fn grasp_counts(&self) -> [usize; 6] {
        let mut counts = [0; 6];
        for o in &self.objects {
            counts[o.grasp.index()] += 1;
        }
        counts
    }
}

impl Default for Catalog {
    /// 21 objects: one for Hook and four for every other grasp type. Names are
    /// placeholders for everyday items; only the grasp structure matters.
    fn default() -> Self {
        const NAMES: [(GraspType, [&str; 4]); 5] = [
            (
                GraspType::Cylindrical,
                ["water bottle", "mug", "soda can", "flashlight"],
            ),
            (
                GraspType::Spherical,
                ["tennis ball", "apple", "orange", "light bulb"],
            ),
            (
                GraspType::Tripod,
                ["marker cap", "bottle cap", "dice", "walnut"],
            ),
            (GraspType::Pinch, ["coin", "paper clip", "eraser", "pen"]),
            (GraspType::Lateral, ["key", "card", "cd", "spoon"]),
        ];
        let mut objects = Vec::with_capacity(21);
        for (grasp, names) in NAMES {
            for name in names {
                objects.push(ObjectItem {
                    id: objects.len() as u32,
                    name: name.to_string(),
                    grasp,
                });
            }
        }
        objects.push(ObjectItem {
            id: objects.len() as u32,
            name: "shopping bag".to_string(),
            grasp: GraspType::Hook,
        });
        Self::new(objects).expect("default catalog is valid")
    }
}

impl TryFrom<Vec<ObjectItem>> for Catalog {
    type Error = Error;

    fn try_from(value: Vec<ObjectItem>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Catalog> for Vec<ObjectItem> {
    fn from(value: Catalog) -> Self {
        value.objects
    }
}

/// A calibrated gaze point on the grasp panel, in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: Millis,
    pub x: f64,
    pub y: f64,
    /// False when the tracker lost the eyes.
    pub valid: bool,
}

/// Which interface produced a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Dwell,
    Fsm,
    Pr,
    Tap,
    Simulated,
}

/// `Commit` is the first selection inside a trial window, `Correction` any later one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCause {
    Commit,
    Correction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub t: Millis,
    pub grasp: GraspType,
    pub source: SelectionSource,
    pub cause: SelectionCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Standby,
    Operation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub t: Millis,
    pub phase: Phase,
}

/// What the switching time of a trial was measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StAnchor {
    /// First fixation on the target object.
    Fixation,
    /// Entry into the Operation phase.
    OperationEnter,
}

/// One scored grasp-switch attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub set_index: u32,
    pub slot_index: u32,
    /// False for the warm-up slot that anchors a set; only scored trials enter the metrics.
    pub scored: bool,
    pub target_object: ObjectItem,
    pub target_grasp: GraspType,
    pub t_first_fixation: Option<Millis>,
    pub t_operation_enter: Millis,
    pub t_operation_exit: Millis,
    pub selections: Vec<SelectionEvent>,
    pub final_grasp: Option<GraspType>,
    pub st_seconds: Option<f64>,
    pub st_anchor: StAnchor,
    pub correct: bool,
    pub error_count: u32,
    pub ncc_required: Option<u32>,
}
