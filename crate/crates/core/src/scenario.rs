//! Scenario files: depot, fleet, targets, timed events and overrides.
//!
//! ```json
//! {
//!   "version": 1,
//!   "depot": {"x": 0, "y": 0},
//!   "fleet_size": 3,
//!   "seed": 7,
//!   "targets": [{"id": 1, "position": {"x": 120, "y": -40}, "loiter_radius": 3}],
//!   "events": [{"time": 30, "added": [], "removed": [1]}]
//! }
//! ```
//!
//! `quad`, `seed`, `events`, `config` and every target's `loiter_radius`
//! may be omitted.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocation::ArrivalEvent;
use crate::dynamics::{v_max, QuadParams};
use crate::error::{Error, Result};
use crate::model::{Depot, Point, Target, TargetId, TargetSet};
use crate::trajectory::{DEFAULT_ENTRIES, DEFAULT_SEGMENTS, MIN_SEGMENTS};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// `None` uses twice the largest loiter radius.
    pub merge_radius: Option<f64>,
    pub entries: usize,
    pub segments: usize,
    /// Speed used to time event scripts; `None` uses the loiter speed of the
    /// smallest circle.
    pub cruise_speed: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            merge_radius: None,
            entries: DEFAULT_ENTRIES,
            segments: DEFAULT_SEGMENTS,
            cruise_speed: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    depot: Point,
    fleet_size: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    quad: QuadParams,
    targets: Vec<Target>,
    #[serde(default)]
    events: Vec<ArrivalEvent>,
    #[serde(default)]
    config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub depot: Depot,
    pub quad: QuadParams,
    pub fleet_size: usize,
    pub targets: TargetSet,
    pub events: Vec<ArrivalEvent>,
    pub seed: u64,
    pub config: ScenarioConfig,
}

impl Scenario {
    pub fn cruise_speed(&self) -> Result<f64> {
        if let Some(v) = self.config.cruise_speed {
            return Ok(v);
        }
        let r = self
            .targets
            .iter()
            .map(|t| t.loiter_radius)
            .fold(f64::INFINITY, f64::min);
        v_max(&self.quad, r)
    }

    /// Every target id ever mentioned: initial and added.
    pub fn all_target_ids(&self) -> BTreeSet<TargetId> {
        self.targets
            .ids()
            .chain(self.events.iter().flat_map(|e| e.added.iter().map(|t| t.id)))
            .collect()
    }

    /// Checks the invariants serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.fleet_size == 0 {
            return Err(Error::schema("fleet_size", "must be at least 1"));
        }
        if self.fleet_size > self.targets.len() {
            return Err(Error::schema(
                "fleet_size",
                format!("{} vehicles but only {} initial targets", self.fleet_size, self.targets.len()),
            ));
        }
        if !self.depot.position.is_finite() {
            return Err(Error::schema("depot", "coordinates must be finite"));
        }
        self.quad.validate().map_err(|e| Error::schema("quad", e.to_string()))?;
        let c = &self.config;
        if c.entries < 2 {
            return Err(Error::schema("config.entries", "must be at least 2"));
        }
        if c.segments < MIN_SEGMENTS {
            return Err(Error::schema("config.segments", format!("must be at least {MIN_SEGMENTS}")));
        }
        if c.merge_radius.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::schema("config.merge_radius", "must be finite and >= 0"));
        }
        if c.cruise_speed.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::schema("config.cruise_speed", "must be positive"));
        }
        Ok(())
    }
}

/// Builds a scenario from already-parsed parts, checking ids and events.
fn assemble(file: ScenarioFile) -> Result<Scenario> {
    if file.version != SCENARIO_VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported version {} (expected {SCENARIO_VERSION})", file.version),
        ));
    }
    if file.targets.is_empty() {
        return Err(Error::schema("targets", "at least one target is required"));
    }
    let mut known = BTreeSet::new();
    let mut targets = TargetSet::default();
    for (i, t) in file.targets.iter().enumerate() {
        t.validate().map_err(|e| Error::schema(format!("targets[{i}]"), e.to_string()))?;
        if !known.insert(t.id) {
            return Err(Error::schema(format!("targets[{i}].id"), format!("duplicate target id {}", t.id)));
        }
        targets.insert(*t)?;
    }
    let mut last_time = 0.0;
    for (i, e) in file.events.iter().enumerate() {
        if !(e.time >= 0.0 && e.time.is_finite()) {
            return Err(Error::schema(format!("events[{i}].time"), "must be finite and >= 0"));
        }
        if e.time < last_time {
            return Err(Error::schema(
                format!("events[{i}].time"),
                format!("events must be sorted by time ({} after {last_time})", e.time),
            ));
        }
        last_time = e.time;
        for (j, t) in e.added.iter().enumerate() {
            t.validate()
                .map_err(|err| Error::schema(format!("events[{i}].added[{j}]"), err.to_string()))?;
            if !known.insert(t.id) {
                return Err(Error::schema(
                    format!("events[{i}].added[{j}].id"),
                    format!("duplicate target id {}", t.id),
                ));
            }
        }
        for (j, id) in e.removed.iter().enumerate() {
            if !known.contains(id) {
                return Err(Error::schema(
                    format!("events[{i}].removed[{j}]"),
                    format!("target {id} is not known at time {}", e.time),
                ));
            }
        }
    }
    let scenario = Scenario {
        depot: Depot::new(file.depot),
        quad: file.quad,
        fleet_size: file.fleet_size,
        targets,
        events: file.events,
        seed: file.seed,
        config: file.config,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Parses scenario JSON text; `path` only labels errors.
pub fn parse_scenario_str(text: &str, path: &Path) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    assemble(file)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario_str(&text, path)
}
