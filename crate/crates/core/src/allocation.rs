//! Target assignment: the static cluster-then-tour pipeline and the dynamic
//! absorb-and-continue variant, plus the two procedures compared in the
//! dynamic study and a timed scenario runner.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{absorb_target, kmeans, truncate_targets, Clustering};
use crate::error::{Error, Result};
use crate::model::{dist, team_cost, tour_cost_from, Allocation, Depot, Point, Target, TargetId, TargetSet};
use crate::tsp::{christofides, rotate_tour_to_nearest, MatchingKind, MetricGraph};

/// Merge cutoff used when none is configured: overlapping loiter circles
/// collapse.
pub fn default_merge_radius<'a>(targets: impl IntoIterator<Item = &'a Target>) -> f64 {
    2.0 * targets.into_iter().map(|t| t.loiter_radius).fold(0.0, f64::max)
}

struct ClusterTour {
    sequence: Vec<TargetId>,
    sites: Vec<Target>,
    covers: BTreeMap<TargetId, Vec<TargetId>>,
    matching: MatchingKind,
}

/// Merge, tour and rotate one cluster.
fn cluster_tour(members: &[Target], anchor: Point, merge_radius: f64) -> Result<ClusterTour> {
    if members.is_empty() {
        return Ok(ClusterTour {
            sequence: Vec::new(),
            sites: Vec::new(),
            covers: BTreeMap::new(),
            matching: MatchingKind::None,
        });
    }
    let merged = truncate_targets(members, merge_radius)?;
    let graph = MetricGraph::from_targets(&merged.representatives)?;
    let tour = christofides(&graph)?;
    let by_id: BTreeMap<TargetId, Point> = merged.representatives.iter().map(|t| (t.id, t.position)).collect();
    let sequence = rotate_tour_to_nearest(&tour.cycle, anchor, |id| Ok(by_id[&id]))?;
    Ok(ClusterTour {
        sequence,
        covers: merged.groups(),
        sites: merged.representatives,
        matching: tour.matching,
    })
}

/// Builds one tour per cluster in parallel and assembles them in cluster
/// order.
fn tours_for_clusters(
    groups: &[Vec<Target>],
    anchors: &[Point],
    merge_radius: f64,
) -> Result<(Allocation, Vec<MatchingKind>)> {
    let built: Vec<ClusterTour> = groups
        .par_iter()
        .zip(anchors.par_iter())
        .map(|(members, anchor)| cluster_tour(members, *anchor, merge_radius))
        .collect::<Result<_>>()?;
    let mut alloc = Allocation::empty(groups.len());
    let mut matchings = Vec::with_capacity(groups.len());
    for (v, ct) in built.into_iter().enumerate() {
        alloc.tours[v].sequence = ct.sequence;
        for site in ct.sites {
            alloc.sites.insert(site)?;
        }
        alloc.covers.extend(ct.covers);
        matchings.push(ct.matching);
    }
    Ok((alloc, matchings))
}

fn group_members(clustering: &Clustering, targets: &TargetSet) -> Vec<Vec<Target>> {
    let mut groups = vec![Vec::new(); clustering.k];
    for t in targets.iter() {
        if let Some(c) = clustering.cluster_of(t.id) {
            groups[c].push(*t);
        }
    }
    groups
}

/// Static assignment: K-means into `m` clusters, merge near-coincident
/// targets, Christofides per cluster, each tour starting at the target
/// nearest the depot. Vehicle `i` flies cluster `i`.
pub fn assign_static(
    targets: &TargetSet,
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
) -> Result<Allocation> {
    Ok(assign_static_detailed(targets, m, depot, seed, merge_radius)?.0)
}

/// [`assign_static`] that also returns the clustering and which matching
/// each cluster's tour used.
pub fn assign_static_detailed(
    targets: &TargetSet,
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
) -> Result<(Allocation, Clustering, Vec<MatchingKind>)> {
    if m == 0 {
        return Err(Error::invalid("fleet size must be at least 1"));
    }
    if targets.is_empty() {
        return Err(Error::invalid("no targets to assign"));
    }
    if m > targets.len() {
        return Err(Error::invalid(format!(
            "fleet of {m} exceeds {} targets; some vehicles would get no cluster",
            targets.len()
        )));
    }
    let clustering = kmeans(&targets.to_vec(), m, seed)?;
    let radius = merge_radius.unwrap_or_else(|| default_merge_radius(targets.iter()));
    let groups = group_members(&clustering, targets);
    let (alloc, matchings) = tours_for_clusters(&groups, &vec![depot.position; m], radius)?;
    Ok((alloc, clustering, matchings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleStatus {
    AtDepot,
    Touring,
    IdleAtLastTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetState {
    pub positions: Vec<Point>,
    pub status: Vec<VehicleStatus>,
    /// Completed iterations.
    pub iteration: usize,
}

impl FleetState {
    pub fn at_depot(m: usize, depot: &Depot) -> Self {
        FleetState {
            positions: vec![depot.position; m],
            status: vec![VehicleStatus::AtDepot; m],
            iteration: 0,
        }
    }
}

/// Targets appearing and disappearing at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalEvent {
    pub time: f64,
    #[serde(default)]
    pub added: Vec<Target>,
    #[serde(default)]
    pub removed: Vec<TargetId>,
}

/// Tours of one dynamic iteration together with where each vehicle starts.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPlan {
    pub allocation: Allocation,
    pub starts: Vec<Point>,
}

impl IterationPlan {
    pub fn tour_costs(&self) -> Result<Vec<f64>> {
        self.allocation
            .tours
            .iter()
            .zip(&self.starts)
            .map(|(t, s)| tour_cost_from(*s, t, &self.allocation.sites))
            .collect()
    }

    pub fn cost(&self) -> Result<f64> {
        Ok(self.tour_costs()?.iter().sum())
    }
}

/// State carried across dynamic iterations: the frozen clustering, the fleet
/// and the targets known but not yet visited.
#[derive(Debug, Clone)]
pub struct DynamicPlanner {
    depot: Depot,
    clustering: Clustering,
    pending: TargetSet,
    known: BTreeSet<TargetId>,
    visited: BTreeSet<TargetId>,
    removed: BTreeSet<TargetId>,
    fleet: FleetState,
    merge_radius: Option<f64>,
}

impl DynamicPlanner {
    /// Clusters the initial targets once; later targets are only absorbed.
    pub fn new(initial: &TargetSet, m: usize, depot: &Depot, seed: u64, merge_radius: Option<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("fleet size must be at least 1"));
        }
        if m > initial.len() {
            return Err(Error::invalid(format!(
                "fleet of {m} exceeds {} initial targets",
                initial.len()
            )));
        }
        Ok(DynamicPlanner {
            depot: *depot,
            clustering: kmeans(&initial.to_vec(), m, seed)?,
            pending: initial.clone(),
            known: initial.ids().collect(),
            visited: BTreeSet::new(),
            removed: BTreeSet::new(),
            fleet: FleetState::at_depot(m, depot),
            merge_radius,
        })
    }

    pub fn fleet(&self) -> &FleetState {
        &self.fleet
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn pending(&self) -> &TargetSet {
        &self.pending
    }

    pub fn visited(&self) -> &BTreeSet<TargetId> {
        &self.visited
    }

    pub fn removed(&self) -> &BTreeSet<TargetId> {
        &self.removed
    }

    pub fn depot(&self) -> &Depot {
        &self.depot
    }

    /// Absorbs arrivals into their nearest clusters and drops removed
    /// targets that are still pending. Removing a visited target is a no-op.
    pub fn apply_event(&mut self, event: &ArrivalEvent) -> Result<()> {
        for t in &event.added {
            t.validate()?;
            if !self.known.insert(t.id) {
                return Err(Error::DuplicateTarget(t.id));
            }
            absorb_target(&mut self.clustering, t)?;
            self.pending.insert(*t)?;
        }
        for id in &event.removed {
            if !self.known.contains(id) {
                return Err(Error::UnknownTarget(*id));
            }
            if self.pending.remove(*id).is_some() {
                self.clustering.remove(*id);
                self.removed.insert(*id);
            }
        }
        Ok(())
    }

    /// Tours every pending target, each vehicle starting from where it is.
    /// On the first iteration that is the depot, so tours start at the
    /// target nearest the depot.
    pub fn plan(&self) -> Result<IterationPlan> {
        let radius = self
            .merge_radius
            .unwrap_or_else(|| default_merge_radius(self.pending.iter()));
        let groups = group_members(&self.clustering, &self.pending);
        let (allocation, _) = tours_for_clusters(&groups, &self.fleet.positions, radius)?;
        Ok(IterationPlan {
            allocation,
            starts: self.fleet.positions.clone(),
        })
    }

    /// Records the tours actually flown. Vehicles that flew anything wait at
    /// their last site.
    pub fn complete(&mut self, executed: &Allocation) -> Result<()> {
        for (v, tour) in executed.tours.iter().enumerate() {
            let Some(last) = tour.sequence.last() else {
                continue;
            };
            self.fleet.positions[v] = executed.sites.get(*last)?.position;
            self.fleet.status[v] = VehicleStatus::IdleAtLastTarget;
        }
        for id in executed.covered_by_tour().into_iter().flatten() {
            if self.pending.remove(id).is_none() {
                return Err(Error::UnknownTarget(id));
            }
            self.visited.insert(id);
        }
        self.fleet.iteration += 1;
        Ok(())
    }

    /// One full iteration: apply `events`, plan, and fly every planned tour.
    pub fn assign_dynamic_iteration(&mut self, events: &[ArrivalEvent]) -> Result<IterationPlan> {
        for e in events {
            self.apply_event(e)?;
        }
        let plan = self.plan()?;
        self.complete(&plan.allocation)?;
        Ok(plan)
    }
}

/// Return leg of every vehicle that toured something.
fn return_legs(alloc: &Allocation, depot: &Depot) -> Result<f64> {
    let mut total = 0.0;
    for tour in &alloc.tours {
        if let Some(last) = tour.sequence.last() {
            total += dist(alloc.sites.get(*last)?.position, depot.position);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Procedure1Cost {
    pub first_run: f64,
    pub return_legs: f64,
    pub second_run: f64,
}

impl Procedure1Cost {
    pub fn total(&self) -> f64 {
        self.first_run + self.return_legs + self.second_run
    }
}

/// Static planning twice: tour the initial targets, fly back to the depot,
/// then run the static pipeline again on the arrivals. The second run uses
/// at most as many vehicles as there are arrivals.
pub fn procedure1_cost(
    initial: &TargetSet,
    arrivals: &[Target],
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
) -> Result<Procedure1Cost> {
    let first = assign_static(initial, m, depot, seed, merge_radius)?;
    let first_run = team_cost(&first, depot, &first.sites)?;
    let return_legs = return_legs(&first, depot)?;
    let second_run = if arrivals.is_empty() {
        0.0
    } else {
        let new = TargetSet::new(arrivals.iter().copied())?;
        let second = assign_static(&new, m.min(new.len()), depot, seed, merge_radius)?;
        team_cost(&second, depot, &second.sites)?
    };
    Ok(Procedure1Cost {
        first_run,
        return_legs,
        second_run,
    })
}

pub fn procedure1_total_cost(
    initial: &TargetSet,
    arrivals: &[Target],
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
) -> Result<f64> {
    Ok(procedure1_cost(initial, arrivals, m, depot, seed, merge_radius)?.total())
}

/// Dynamic planning: tour the initial targets, then absorb the arrivals
/// into the frozen clusters and tour them from where each vehicle stopped.
pub fn procedure2_iterations(
    initial: &TargetSet,
    arrivals: &[Target],
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
) -> Result<Vec<IterationPlan>> {
    let mut planner = DynamicPlanner::new(initial, m, depot, seed, merge_radius)?;
    let first = planner.assign_dynamic_iteration(&[])?;
    let event = ArrivalEvent {
        time: 0.0,
        added: arrivals.to_vec(),
        removed: Vec::new(),
    };
    let second = planner.assign_dynamic_iteration(std::slice::from_ref(&event))?;
    Ok(vec![first, second])
}

pub fn procedure2_total_cost(
    initial: &TargetSet,
    arrivals: &[Target],
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
) -> Result<f64> {
    procedure2_iterations(initial, arrivals, m, depot, seed, merge_radius)?
        .iter()
        .try_fold(0.0, |acc, it| Ok(acc + it.cost()?))
}

/// One executed iteration of a timed scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedIteration {
    pub start_time: f64,
    pub end_time: f64,
    pub starts: Vec<Point>,
    /// Tours as flown: sites skipped because all their targets were removed
    /// are absent, and `covers` lists only targets scanned.
    pub allocation: Allocation,
    pub planned: Allocation,
}

impl ExecutedIteration {
    pub fn tour_costs(&self) -> Result<Vec<f64>> {
        self.allocation
            .tours
            .iter()
            .zip(&self.starts)
            .map(|(t, s)| tour_cost_from(*s, t, &self.allocation.sites))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub iterations: Vec<ExecutedIteration>,
    pub visited: BTreeSet<TargetId>,
    pub removed: BTreeSet<TargetId>,
}

impl ScenarioRun {
    /// Every known target is scanned exactly once or was removed before
    /// being scanned, never both.
    pub fn check_coverage(&self, known: &BTreeSet<TargetId>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for it in &self.iterations {
            for id in it.allocation.covered_by_tour().into_iter().flatten() {
                if !seen.insert(id) {
                    return Err(Error::DuplicateTarget(id));
                }
                if self.removed.contains(&id) {
                    return Err(Error::invalid(format!("target {id} scanned and removed")));
                }
            }
        }
        if seen != self.visited {
            return Err(Error::invalid("executed tours disagree with the visited set"));
        }
        let accounted: BTreeSet<TargetId> = seen.union(&self.removed).copied().collect();
        if &accounted != known {
            let missing = known.difference(&accounted).next();
            return Err(Error::invalid(format!("target {missing:?} neither scanned nor removed")));
        }
        Ok(())
    }
}

/// Runs a timed scenario with dynamic planning. Vehicles fly at
/// `cruise_speed` throughout, so a tour takes its cost divided by the speed.
/// Arrivals join at the next iteration boundary; a removal applies to every
/// leg that has not started by its time. Iterations continue until every
/// event has been seen and nothing is pending.
pub fn run_scenario(
    initial: &TargetSet,
    events: &[ArrivalEvent],
    m: usize,
    depot: &Depot,
    seed: u64,
    merge_radius: Option<f64>,
    cruise_speed: f64,
) -> Result<ScenarioRun> {
    if !(cruise_speed > 0.0) || !cruise_speed.is_finite() {
        return Err(Error::invalid(format!("cruise speed must be positive, got {cruise_speed}")));
    }
    if events.windows(2).any(|w| w[1].time < w[0].time) || events.iter().any(|e| !(e.time >= 0.0)) {
        return Err(Error::invalid("events must have nonnegative, sorted times"));
    }
    let mut planner = DynamicPlanner::new(initial, m, depot, seed, merge_radius)?;
    let mut next_event = 0;
    let mut now = 0.0;
    let mut iterations = Vec::new();
    loop {
        while next_event < events.len() && events[next_event].time <= now {
            planner.apply_event(&events[next_event])?;
            next_event += 1;
        }
        if planner.pending().is_empty() {
            match events.get(next_event) {
                Some(e) => {
                    now = e.time;
                    continue;
                }
                None => break,
            }
        }
        let plan = planner.plan()?;
        // removals that land while this iteration is being flown
        let mut removal_times: BTreeMap<TargetId, f64> = BTreeMap::new();
        for e in &events[next_event..] {
            for id in &e.removed {
                removal_times.entry(*id).or_insert(e.time);
            }
        }
        let mut executed = Allocation::empty(m);
        let mut end_time = now;
        for (v, tour) in plan.allocation.tours.iter().enumerate() {
            let mut clock = now;
            let mut here = plan.starts[v];
            for site_id in &tour.sequence {
                let site = plan.allocation.sites.get(*site_id)?;
                let members = plan.allocation.covers.get(site_id).cloned().unwrap_or_else(|| vec![*site_id]);
                let alive: Vec<TargetId> = members
                    .into_iter()
                    .filter(|id| removal_times.get(id).is_none_or(|&t| t > clock))
                    .collect();
                if alive.is_empty() {
                    continue;
                }
                clock += (dist(here, site.position) + crate::model::loiter_arc_length(site)) / cruise_speed;
                here = site.position;
                executed.tours[v].sequence.push(*site_id);
                executed.sites.insert(*site)?;
                executed.covers.insert(*site_id, alive);
            }
            end_time = f64::max(end_time, clock);
        }
        planner.complete(&executed)?;
        iterations.push(ExecutedIteration {
            start_time: now,
            end_time,
            starts: plan.starts,
            allocation: executed,
            planned: plan.allocation,
        });
        // an iteration that flew nothing still has to move time forward
        now = if end_time > now {
            end_time
        } else {
            match events.get(next_event) {
                Some(e) => e.time.max(now),
                None => break,
            }
        };
    }
    Ok(ScenarioRun {
        iterations,
        visited: planner.visited().clone(),
        removed: planner.removed().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: u64, x: f64, y: f64) -> Target {
        Target::new(id, Point::new(x, y), 1.0)
    }

    fn set(ts: &[Target]) -> TargetSet {
        TargetSet::new(ts.iter().copied()).unwrap()
    }

    #[test]
    fn single_target_single_vehicle() {
        let a = assign_static(&set(&[t(4, 3.0, 4.0)]), 1, &Depot::default(), 0, None).unwrap();
        assert_eq!(a.tours[0].sequence, vec![TargetId(4)]);
    }

    #[test]
    fn fleet_larger_than_targets() {
        assert!(assign_static(&set(&[t(0, 0.0, 0.0)]), 2, &Depot::default(), 0, None).is_err());
    }

    #[test]
    fn line_instance_procedures_by_hand() {
        // one vehicle, targets on the x axis at 10, 20, 30, 40
        let ts: Vec<Target> = (1..=4).map(|i| t(i, 10.0 * i as f64, 0.0)).collect();
        let depot = Depot::default();
        let loiter = std::f64::consts::TAU;
        let p1 = procedure1_cost(&set(&ts[..2]), &ts[2..], 1, &depot, 5, None).unwrap();
        // 0 -> 10 -> 20, back to 0, then 0 -> 30 -> 40
        assert!((p1.first_run - (20.0 + 2.0 * loiter)).abs() < 1e-9);
        assert!((p1.return_legs - 20.0).abs() < 1e-9);
        assert!((p1.second_run - (40.0 + 2.0 * loiter)).abs() < 1e-9);
        let p2 = procedure2_total_cost(&set(&ts[..2]), &ts[2..], 1, &depot, 5, None).unwrap();
        // 0 -> 10 -> 20 -> 30 -> 40
        assert!((p2 - (40.0 + 4.0 * loiter)).abs() < 1e-9);
    }

    #[test]
    fn arrival_on_last_target_costs_one_loiter() {
        let ts = vec![t(1, 10.0, 0.0), t(2, 20.0, 0.0)];
        let depot = Depot::default();
        let its = procedure2_iterations(&set(&ts), &[t(9, 20.0, 0.0)], 1, &depot, 0, None).unwrap();
        assert!((its[1].cost().unwrap() - std::f64::consts::TAU).abs() < 1e-12);
        assert_eq!(its[1].starts[0], Point::new(20.0, 0.0));
    }

    #[test]
    fn no_arrivals_ratio_is_return_legs() {
        let ts: Vec<Target> = (0..12).map(|i| t(i, (i * 37 % 11) as f64 * 9.0, (i * 53 % 7) as f64 * 13.0)).collect();
        let depot = Depot::new(Point::new(-5.0, 3.0));
        let p1 = procedure1_cost(&set(&ts), &[], 3, &depot, 11, None).unwrap();
        let p2 = procedure2_total_cost(&set(&ts), &[], 3, &depot, 11, None).unwrap();
        assert_eq!(p1.second_run, 0.0);
        assert!((p1.first_run - p2).abs() < 1e-9);
        assert!(p1.total() > p2);
    }

    #[test]
    fn mid_tour_removal_skips_later_leg() {
        let ts = vec![t(1, 10.0, 0.0), t(2, 20.0, 0.0), t(3, 30.0, 0.0)];
        let events = vec![ArrivalEvent {
            time: 1.0,
            added: vec![t(7, 50.0, 0.0)],
            removed: vec![TargetId(3), TargetId(1)],
        }];
        let run = run_scenario(&set(&ts), &events, 1, &Depot::default(), 0, Some(0.0), 10.0).unwrap();
        // target 1 is reached before t = 1, target 3 is skipped, 7 is flown next
        assert_eq!(run.iterations[0].allocation.tours[0].sequence, vec![TargetId(1), TargetId(2)]);
        assert_eq!(run.iterations[1].allocation.tours[0].sequence, vec![TargetId(7)]);
        assert_eq!(run.iterations[1].starts[0], Point::new(20.0, 0.0));
        let known: BTreeSet<TargetId> = [1, 2, 3, 7].into_iter().map(TargetId).collect();
        run.check_coverage(&known).unwrap();
        assert!(run.removed.contains(&TargetId(3)) && !run.removed.contains(&TargetId(1)));
    }
}
