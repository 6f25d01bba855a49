//! Geometric and cost primitives shared by every planner stage.
//!
//! Distances are planar and Euclidean. A tour is charged center-to-center:
//! the depot leg, the legs between consecutive targets, and one full loiter
//! circle per visited target.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position or vector in meters (or m/s, m/s² where used as a vector).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(&self) -> Point {
        Point::new(-self.y, self.x)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetId(pub u64);

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point of interest that must be circled once at `loiter_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub id: TargetId,
    pub position: Point,
    #[serde(default = "default_loiter_radius")]
    pub loiter_radius: f64,
}

pub const DEFAULT_LOITER_RADIUS: f64 = 3.0;

fn default_loiter_radius() -> f64 {
    DEFAULT_LOITER_RADIUS
}

impl Target {
    pub fn new(id: u64, position: Point, loiter_radius: f64) -> Self {
        Target {
            id: TargetId(id),
            position,
            loiter_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::invalid(format!("target {} has non-finite position", self.id)));
        }
        if !(self.loiter_radius > 0.0 && self.loiter_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "target {} loiter radius must be positive, got {}",
                self.id, self.loiter_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Depot {
    pub position: Point,
}

impl Depot {
    pub fn new(position: Point) -> Self {
        Depot { position }
    }
}

/// Targets keyed by id. Iteration order is ascending id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetSet {
    targets: BTreeMap<TargetId, Target>,
}

impl TargetSet {
    pub fn new(targets: impl IntoIterator<Item = Target>) -> Result<Self> {
        let mut set = TargetSet::default();
        for t in targets {
            set.insert(t)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, target: Target) -> Result<()> {
        target.validate()?;
        if self.targets.contains_key(&target.id) {
            return Err(Error::DuplicateTarget(target.id));
        }
        self.targets.insert(target.id, target);
        Ok(())
    }

    pub fn remove(&mut self, id: TargetId) -> Option<Target> {
        self.targets.remove(&id)
    }

    pub fn get(&self, id: TargetId) -> Result<&Target> {
        self.targets.get(&id).ok_or(Error::UnknownTarget(id))
    }

    pub fn contains(&self, id: TargetId) -> bool {
        self.targets.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Target> {
        self.targets.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = TargetId> + '_ {
        self.targets.keys().copied()
    }

    pub fn to_vec(&self) -> Vec<Target> {
        self.targets.values().copied().collect()
    }
}

impl FromIterator<Target> for TargetSet {
    /// Later duplicates overwrite earlier ones; use [`TargetSet::new`] for validation.
    fn from_iter<I: IntoIterator<Item = Target>>(iter: I) -> Self {
        TargetSet {
            targets: iter.into_iter().map(|t| (t.id, t)).collect(),
        }
    }
}

/// Ordered visit sequence of one vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tour {
    pub vehicle_id: usize,
    pub sequence: Vec<TargetId>,
}

impl Tour {
    pub fn new(vehicle_id: usize, sequence: Vec<TargetId>) -> Self {
        Tour {
            vehicle_id,
            sequence,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn has_repeats(&self) -> bool {
        let mut seen = BTreeSet::new();
        !self.sequence.iter().all(|id| seen.insert(*id))
    }
}

/// One tour per vehicle over a set of loiter sites.
///
/// When nearby targets have been merged, `sites` holds the merged
/// representatives that are actually flown and `covers` maps each site to
/// the original targets its scan accounts for.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub tours: Vec<Tour>,
    pub sites: TargetSet,
    pub covers: BTreeMap<TargetId, Vec<TargetId>>,
}

impl Allocation {
    pub fn empty(vehicles: usize) -> Self {
        Allocation {
            tours: (0..vehicles).map(|v| Tour::new(v, Vec::new())).collect(),
            sites: TargetSet::default(),
            covers: BTreeMap::new(),
        }
    }

    /// Original target ids covered by each tour, in visit order.
    pub fn covered_by_tour(&self) -> Vec<Vec<TargetId>> {
        self.tours
            .iter()
            .map(|tour| {
                tour.sequence
                    .iter()
                    .flat_map(|site| match self.covers.get(site) {
                        Some(members) => members.clone(),
                        None => vec![*site],
                    })
                    .collect()
            })
            .collect()
    }

    /// Checks that the tours cover `expected` exactly once each.
    pub fn check_coverage(&self, expected: impl IntoIterator<Item = TargetId>) -> Result<()> {
        let expected: BTreeSet<TargetId> = expected.into_iter().collect();
        let mut seen = BTreeSet::new();
        for id in self.covered_by_tour().into_iter().flatten() {
            if !seen.insert(id) {
                return Err(Error::DuplicateTarget(id));
            }
            if !expected.contains(&id) {
                return Err(Error::UnknownTarget(id));
            }
        }
        if let Some(missing) = expected.difference(&seen).next() {
            return Err(Error::invalid(format!("target {missing} is not covered by any tour")));
        }
        Ok(())
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a - b).norm()
}

/// Length of one full scan circle around `t`.
pub fn loiter_arc_length(t: &Target) -> f64 {
    TAU * t.loiter_radius
}

/// Cost of flying `tour` from `start`: first leg, inter-target legs and loiters.
pub fn tour_cost_from(start: Point, tour: &Tour, targets: &TargetSet) -> Result<f64> {
    let mut cost = 0.0;
    let mut here = start;
    for id in &tour.sequence {
        let t = targets.get(*id)?;
        cost += dist(here, t.position);
        cost += loiter_arc_length(t);
        here = t.position;
    }
    Ok(cost)
}

pub fn tour_cost(tour: &Tour, depot: &Depot, targets: &TargetSet) -> Result<f64> {
    tour_cost_from(depot.position, tour, targets)
}

pub fn team_cost(alloc: &Allocation, depot: &Depot, targets: &TargetSet) -> Result<f64> {
    alloc
        .tours
        .iter()
        .try_fold(0.0, |acc, tour| Ok(acc + tour_cost(tour, depot, targets)?))
}
