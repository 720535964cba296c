//! Object-presentation sequences.
//!
//! A set has four slots per grasp type (24 in total): objects of a grasp
//! type share its slots evenly, so the lone Hook object is shown four times
//! and every other object once. Neighbouring slots must need different grasp
//! types, and the first slot differs from the FSM's initial grasp so that
//! every switch costs at least one co-contraction.
//!
//! Sets are built by randomized depth-first search over the grasp sequence.
//! A suite of sets is then accepted only if, pooled over the whole suite,
//! every co-contraction count 1..=5 occurs with a frequency within
//! `balance_tolerance` (relative) of 1/5; otherwise a fresh suite is drawn.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Catalog, CycleOrder, GraspType};
use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const SUITE_SCHEMA_VERSION: &str = "gsi-suite/1";
pub const GENERATOR_VERSION: &str = concat!("gsi-core ", env!("CARGO_PKG_VERSION"));

/// Upper bound on search nodes expanded while building a single set.
const MAX_SEARCH_NODES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSet {
    pub set_index: u32,
    pub slots: Vec<u32>,
}

/// Structural rules a set must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetRules {
    pub slots_per_grasp: usize,
    /// When set, the first slot may not require this grasp.
    pub initial_grasp: Option<GraspType>,
}

impl Default for SetRules {
    fn default() -> Self {
        Self {
            slots_per_grasp: 4,
            initial_grasp: Some(GraspType::Cylindrical),
        }
    }
}

impl SetRules {
    pub fn set_len(&self) -> usize {
        self.slots_per_grasp * GraspType::ALL.len()
    }

    /// How many times each object must appear, per grasp type.
    fn repeats(&self, catalog: &Catalog) -> Result<[usize; 6]> {
        let counts = catalog.grasp_counts();
        let mut repeats = [0; 6];
        for g in GraspType::ALL {
            let m = counts[g.index()];
            if m == 0 {
                return Err(Error::Infeasible(format!("catalog has no object for {g}")));
            }
            if !self.slots_per_grasp.is_multiple_of(m) {
                return Err(Error::Infeasible(format!(
                    "{m} objects for {g} cannot evenly fill {} slots",
                    self.slots_per_grasp
                )));
            }
            repeats[g.index()] = self.slots_per_grasp / m;
        }
        Ok(repeats)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Length {
        expected: usize,
        actual: usize,
    },
    UnknownObject {
        slot: usize,
        id: u32,
    },
    Multiplicity {
        object: u32,
        expected: usize,
        actual: usize,
    },
    /// Slots `slot` and `slot + 1` require the same grasp.
    Adjacency {
        slot: usize,
        grasp: GraspType,
    },
    /// The first slot requires the initial grasp.
    StartsAtInitial {
        grasp: GraspType,
    },
}

/// Builds one set with the default rules.
pub fn generate_set(seed: u64, catalog: &Catalog) -> Result<SequenceSet> {
    generate_set_with(seed, catalog, &SetRules::default())
}

pub fn generate_set_with(seed: u64, catalog: &Catalog, rules: &SetRules) -> Result<SequenceSet> {
    let repeats = rules.repeats(catalog)?;
    let mut rng = rng_for(seed, &[]);
    let grasps = grasp_sequence(rules, &mut rng)?;

    // Assign objects to each grasp's slots in shuffled order.
    let by_grasp = catalog.by_grasp();
    let mut pools: Vec<Vec<u32>> = GraspType::ALL
        .iter()
        .map(|g| {
            let mut pool: Vec<u32> = by_grasp[g]
                .iter()
                .flat_map(|o| std::iter::repeat_n(o.id, repeats[g.index()]))
                .collect();
            pool.shuffle(&mut rng);
            pool
        })
        .collect();
    let slots = grasps
        .iter()
        .map(|g| pools[g.index()].pop().expect("pool sized to slot count"))
        .collect();
    Ok(SequenceSet {
        set_index: 1,
        slots,
    })
}

fn grasp_sequence<R: Rng>(rules: &SetRules, rng: &mut R) -> Result<Vec<GraspType>> {
    let len = rules.set_len();
    let mut remaining = [rules.slots_per_grasp; 6];
    let mut seq = Vec::with_capacity(len);
    let mut nodes = 0usize;
    if extend(rules, &mut seq, &mut remaining, len, rng, &mut nodes)? {
        Ok(seq)
    } else {
        Err(Error::Infeasible(
            "no arrangement keeps neighbouring grasps distinct".into(),
        ))
    }
}

fn extend<R: Rng>(
    rules: &SetRules,
    seq: &mut Vec<GraspType>,
    remaining: &mut [usize; 6],
    len: usize,
    rng: &mut R,
    nodes: &mut usize,
) -> Result<bool> {
    if seq.len() == len {
        return Ok(true);
    }
    *nodes += 1;
    if *nodes > MAX_SEARCH_NODES {
        return Err(Error::AttemptsExceeded(MAX_SEARCH_NODES as u64));
    }
    let left = len - seq.len();
    // A value occurring more than ceil(left / 2) times must end up adjacent to itself.
    if remaining.iter().any(|&c| c > left.div_ceil(2)) {
        return Ok(false);
    }
    let forbidden = match seq.last() {
        Some(&g) => Some(g),
        None => rules.initial_grasp,
    };
    let mut candidates: Vec<GraspType> = GraspType::ALL
        .into_iter()
        .filter(|&g| remaining[g.index()] > 0 && Some(g) != forbidden)
        .collect();
    candidates.shuffle(rng);
    for g in candidates {
        remaining[g.index()] -= 1;
        seq.push(g);
        if extend(rules, seq, remaining, len, rng, nodes)? {
            return Ok(true);
        }
        seq.pop();
        remaining[g.index()] += 1;
    }
    Ok(false)
}

/// Checks a set with the default rules.
pub fn validate_set(
    set: &SequenceSet,
    catalog: &Catalog,
) -> std::result::Result<(), Vec<Violation>> {
    validate_set_with(set, catalog, &SetRules::default())
}

/// Enumerates every violated constraint.
pub fn validate_set_with(
    set: &SequenceSet,
    catalog: &Catalog,
    rules: &SetRules,
) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if set.slots.len() != rules.set_len() {
        violations.push(Violation::Length {
            expected: rules.set_len(),
            actual: set.slots.len(),
        });
    }
    let mut grasps = Vec::with_capacity(set.slots.len());
    for (slot, &id) in set.slots.iter().enumerate() {
        match catalog.grasp_of(id) {
            Ok(g) => grasps.push(Some(g)),
            Err(_) => {
                violations.push(Violation::UnknownObject { slot, id });
                grasps.push(None);
            }
        }
    }
    let repeats = rules.repeats(catalog).unwrap_or([1; 6]);
    for o in catalog.objects() {
        let actual = set.slots.iter().filter(|&&id| id == o.id).count();
        let expected = repeats[o.grasp.index()];
        if actual != expected {
            violations.push(Violation::Multiplicity {
                object: o.id,
                expected,
                actual,
            });
        }
    }
    for (slot, pair) in grasps.windows(2).enumerate() {
        if let (Some(a), Some(b)) = (pair[0], pair[1]) {
            if a == b {
                violations.push(Violation::Adjacency { slot, grasp: a });
            }
        }
    }
    if let (Some(Some(first)), Some(initial)) = (grasps.first(), rules.initial_grasp) {
        if *first == initial {
            violations.push(Violation::StartsAtInitial { grasp: initial });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Co-contraction counts of a set, starting from `initial` and assuming each
/// trial ends on its target grasp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NccProfile {
    /// Count of each NCC value 0..=5.
    pub histogram: [u32; 6],
    pub total: u32,
    /// Per-slot NCC values.
    pub values: Vec<u32>,
}

pub fn ncc_profile(
    set: &SequenceSet,
    catalog: &Catalog,
    initial: GraspType,
    order: &CycleOrder,
) -> Result<NccProfile> {
    let mut latched = initial;
    let mut histogram = [0u32; 6];
    let mut values = Vec::with_capacity(set.slots.len());
    for &id in &set.slots {
        let target = catalog.grasp_of(id)?;
        let ncc = order.distance(latched, target);
        histogram[ncc as usize] += 1;
        values.push(ncc);
        latched = target;
    }
    Ok(NccProfile {
        histogram,
        total: values.iter().sum(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_sets: u32,
    pub seed: u64,
    pub balance_tolerance: f64,
    pub max_attempts: u64,
    pub rules: SetRules,
    pub cycle_order: CycleOrder,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_sets: 30,
            seed: 0,
            balance_tolerance: 0.10,
            max_attempts: 10_000,
            rules: SetRules::default(),
            cycle_order: CycleOrder::default(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sets == 0 {
            return Err(Error::InvalidConfig("n_sets must be at least 1".into()));
        }
        if !(self.balance_tolerance > 0.0 && self.balance_tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "balance tolerance {} outside (0, 1)",
                self.balance_tolerance
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be positive".into()));
        }
        Ok(())
    }

    pub fn initial(&self) -> GraspType {
        self.rules.initial_grasp.unwrap_or(GraspType::Cylindrical)
    }
}

/// Pooled NCC statistics over a collection of sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub histogram: [u32; 6],
    /// Frequencies of NCC values 1..=5.
    pub frequencies: [f64; 5],
    pub max_relative_deviation: f64,
    /// Ordered (from, to) grasp transition counts, reported but not enforced.
    pub grasp_pairs: [[u32; 6]; 6],
}

pub fn balance_report(
    sets: &[SequenceSet],
    catalog: &Catalog,
    initial: GraspType,
    order: &CycleOrder,
) -> Result<BalanceReport> {
    let mut histogram = [0u32; 6];
    let mut grasp_pairs = [[0u32; 6]; 6];
    for set in sets {
        let profile = ncc_profile(set, catalog, initial, order)?;
        for (h, p) in histogram.iter_mut().zip(profile.histogram) {
            *h += p;
        }
        let mut prev = initial;
        for &id in &set.slots {
            let g = catalog.grasp_of(id)?;
            grasp_pairs[prev.index()][g.index()] += 1;
            prev = g;
        }
    }
    let n: u32 = histogram.iter().sum();
    let mut frequencies = [0.0; 5];
    let mut max_relative_deviation: f64 = 0.0;
    for v in 1..=5 {
        let f = if n == 0 {
            0.0
        } else {
            histogram[v] as f64 / n as f64
        };
        frequencies[v - 1] = f;
        max_relative_deviation = max_relative_deviation.max((f - 0.2).abs() / 0.2);
    }
    Ok(BalanceReport {
        histogram,
        frequencies,
        max_relative_deviation,
        grasp_pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub sets: Vec<SequenceSet>,
    pub balance: BalanceReport,
    /// Number of whole-suite draws until the balance check passed.
    pub attempts: u64,
}

pub fn generate_suite(config: &SuiteConfig, catalog: &Catalog) -> Result<Suite> {
    config.validate()?;
    let initial = config.initial();
    for attempt in 0..config.max_attempts {
        let sets = (1..=config.n_sets)
            .map(|i| {
                let seed = crate::rng::derive_seed(config.seed, &[attempt, i as u64]);
                generate_set_with(seed, catalog, &config.rules).map(|mut s| {
                    s.set_index = i;
                    s
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let balance = balance_report(&sets, catalog, initial, &config.cycle_order)?;
        if balance.max_relative_deviation <= config.balance_tolerance {
            return Ok(Suite {
                sets,
                balance,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::AttemptsExceeded(config.max_attempts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSetEntry {
    pub set_index: u32,
    pub slots: Vec<u32>,
    pub ncc: NccProfile,
}

/// On-disk suite manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub schema_version: String,
    pub generator_version: String,
    pub config: SuiteConfig,
    pub catalog: Catalog,
    pub balance: BalanceReport,
    pub attempts: u64,
    pub sets: Vec<SuiteSetEntry>,
}

impl SuiteFile {
    pub fn build(config: &SuiteConfig, catalog: &Catalog) -> Result<Self> {
        let suite = generate_suite(config, catalog)?;
        let initial = config.initial();
        let sets = suite
            .sets
            .iter()
            .map(|s| {
                Ok(SuiteSetEntry {
                    set_index: s.set_index,
                    slots: s.slots.clone(),
                    ncc: ncc_profile(s, catalog, initial, &config.cycle_order)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema_version: SUITE_SCHEMA_VERSION.to_string(),
            generator_version: GENERATOR_VERSION.to_string(),
            config: config.clone(),
            catalog: catalog.clone(),
            balance: suite.balance,
            attempts: suite.attempts,
            sets,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("suite serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_str()) {
            Some(SUITE_SCHEMA_VERSION) => {}
            other => {
                return Err(Error::Schema(format!(
                    "expected suite schema {SUITE_SCHEMA_VERSION}, found {other:?}"
                )))
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn sequence_sets(&self) -> Vec<SequenceSet> {
        self.sets
            .iter()
            .map(|s| SequenceSet {
                set_index: s.set_index,
                slots: s.slots.clone(),
            })
            .collect()
    }

    pub fn set(&self, set_index: u32) -> Option<SequenceSet> {
        self.sets
            .iter()
            .find(|s| s.set_index == set_index)
            .map(|s| SequenceSet {
                set_index: s.set_index,
                slots: s.slots.clone(),
            })
    }

    /// Re-checks every set and the stored NCC profiles against the catalog.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let initial = self.config.initial();
        for entry in &self.sets {
            let set = SequenceSet {
                set_index: entry.set_index,
                slots: entry.slots.clone(),
            };
            if let Err(vs) = validate_set_with(&set, &self.catalog, &self.config.rules) {
                for v in vs {
                    problems.push(format!("set {}: {v:?}", entry.set_index));
                }
            }
            match ncc_profile(&set, &self.catalog, initial, &self.config.cycle_order) {
                Ok(p) if p == entry.ncc => {}
                Ok(_) => problems.push(format!(
                    "set {}: stored NCC profile is stale",
                    entry.set_index
                )),
                Err(e) => problems.push(format!("set {}: {e}", entry.set_index)),
            }
        }
        if self.sets.len() != self.config.n_sets as usize {
            problems.push(format!(
                "{} sets stored, config asks for {}",
                self.sets.len(),
                self.config.n_sets
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}
