//! Loiter arcs, circle entry selection and whole-tour flight paths.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collocation::{min_time_transition, Transition};
use crate::dynamics::{v_max, PlanarState, QuadParams};
use crate::error::{Error, Result};
use crate::model::{Depot, Point, Target, TargetId, TargetSet, Tour};

/// Output samples per second of trajectory time.
pub const SAMPLE_RATE: f64 = 50.0;

pub const DEFAULT_ENTRIES: usize = 8;
pub const DEFAULT_SEGMENTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ccw,
    Cw,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ccw => 1.0,
            Direction::Cw => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Transit,
    Loiter,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Transit => "transit",
            Phase::Loiter => "loiter",
        }
    }
}

/// `phase` labels the interval from this sample to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub time: f64,
    pub state: PlanarState,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_time(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Length of the polyline through all samples.
    pub fn total_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].state.position - w[0].state.position).norm())
            .sum()
    }

    pub fn start_state(&self) -> Option<PlanarState> {
        self.samples.first().map(|s| s.state)
    }

    pub fn end_state(&self) -> Option<PlanarState> {
        self.samples.last().map(|s| s.state)
    }

    /// Appends `other` shifted to start where `self` ends. The first sample
    /// of `other` replaces the last of `self`, so times stay strictly
    /// increasing.
    pub fn append(&mut self, mut other: Trajectory) {
        let Some(first) = other.samples.first() else {
            return;
        };
        let offset = match self.samples.pop() {
            Some(last) => last.time - first.time,
            None => 0.0,
        };
        for s in &mut other.samples {
            s.time += offset;
        }
        self.samples.append(&mut other.samples);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,x,y,vx,vy,phase")?;
        for s in &self.samples {
            let (p, v) = (s.state.position, s.state.velocity);
            writeln!(w, "{},{},{},{},{},{}", s.time, p.x, p.y, v.x, v.y, s.phase.as_str())?;
        }
        Ok(())
    }
}

fn sample_times(duration: f64) -> Vec<f64> {
    let steps = (duration * SAMPLE_RATE).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..steps).map(|i| i as f64 / SAMPLE_RATE).collect();
    times.push(duration);
    times
}

/// Full loiter around `t` at the loiter speed, starting and ending at `entry`.
pub fn loiter_trajectory(t: &Target, entry: Point, direction: Direction, p: &QuadParams) -> Result<Trajectory> {
    t.validate()?;
    let r = t.loiter_radius;
    let offset = entry - t.position;
    if ((offset.norm() - r) / r).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "entry point is {} from the center of target {}, radius is {r}",
            offset.norm(),
            t.id
        )));
    }
    let speed = v_max(p, r)?;
    if speed <= 0.0 {
        return Err(Error::Infeasible("no thrust margin to loiter".into()));
    }
    let duration = std::f64::consts::TAU * r / speed;
    let omega = direction.sign() * speed / r;
    let theta0 = offset.y.atan2(offset.x);
    let mut samples: Vec<Sample> = sample_times(duration)
        .into_iter()
        .map(|time| {
            let (s, c) = (theta0 + omega * time).sin_cos();
            Sample {
                time,
                state: PlanarState::new(
                    t.position + Point::new(c, s) * r,
                    Point::new(-s, c) * (omega * r),
                ),
                phase: Phase::Loiter,
            }
        })
        .collect();
    // close the circle exactly
    let last = samples.len() - 1;
    samples[last].state = samples[0].state;
    Ok(Trajectory { samples })
}

/// Samples a solved transition at the output rate plus every knot.
pub fn transition_trajectory(tr: &Transition, p: &QuadParams) -> Trajectory {
    if tr.final_time == 0.0 {
        return Trajectory {
            samples: vec![Sample {
                time: 0.0,
                state: tr.start(),
                phase: Phase::Transit,
            }],
        };
    }
    let mut samples: Vec<Sample> = tr
        .knots
        .iter()
        .map(|k| Sample {
            time: k.time,
            state: k.state,
            phase: Phase::Transit,
        })
        .chain(sample_times(tr.final_time).into_iter().map(|t| Sample {
            time: t,
            state: tr.state_at(t, p),
            phase: Phase::Transit,
        }))
        .collect();
    samples.sort_by(|a, b| a.time.total_cmp(&b.time));
    // knots come first among equal times, so they win the dedup
    samples.dedup_by(|b, a| (b.time - a.time).abs() < 1e-9);
    Trajectory { samples }
}

/// Boundary state for entering `t` at `entry` flying in `direction`.
pub fn entry_state(t: &Target, entry: Point, direction: Direction, p: &QuadParams) -> Result<PlanarState> {
    let speed = v_max(p, t.loiter_radius)?;
    let radial = (entry - t.position) * (1.0 / t.loiter_radius);
    Ok(PlanarState::new(entry, radial.perp() * (direction.sign() * speed)))
}

/// `k` equi-spaced points on the loiter circle, starting on the +x axis.
pub fn entry_points(t: &Target, k: usize) -> Vec<Point> {
    (0..k)
        .map(|j| {
            let (s, c) = (std::f64::consts::TAU * j as f64 / k as f64).sin_cos();
            t.position + Point::new(c, s) * t.loiter_radius
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryCandidate {
    pub index: usize,
    pub entry: Point,
    pub direction: Direction,
    pub time: f64,
    #[serde(skip)]
    pub transition: Transition,
}

#[derive(Debug, Clone)]
pub struct EntryChoice {
    pub best: EntryCandidate,
    /// Solved time of every candidate, `None` where the solver failed.
    /// Candidate `2j` enters at point `j` counterclockwise, `2j + 1` clockwise.
    pub candidate_times: Vec<Option<f64>>,
}

/// Fastest transfer from `exit` onto the loiter circle of `t` over `k`
/// sampled entry points and both directions.
pub fn transition_to_target(
    exit: &PlanarState,
    t: &Target,
    p: &QuadParams,
    k_entries: usize,
    segments: usize,
) -> Result<EntryChoice> {
    if k_entries < 2 {
        return Err(Error::invalid(format!("at least 2 entry points required, got {k_entries}")));
    }
    t.validate()?;
    let candidates: Vec<(usize, Point, Direction)> = entry_points(t, k_entries)
        .into_iter()
        .enumerate()
        .flat_map(|(j, e)| [(2 * j, e, Direction::Ccw), (2 * j + 1, e, Direction::Cw)])
        .collect();
    let solved: Vec<Result<EntryCandidate>> = candidates
        .par_iter()
        .map(|&(index, entry, direction)| {
            let goal = entry_state(t, entry, direction, p)?;
            let transition = min_time_transition(exit, &goal, p, segments)?;
            Ok(EntryCandidate {
                index,
                entry,
                direction,
                time: transition.final_time,
                transition,
            })
        })
        .collect();
    let candidate_times = solved.iter().map(|r| r.as_ref().ok().map(|c| c.time)).collect();
    let mut best: Option<EntryCandidate> = None;
    let mut last_err = None;
    for r in solved {
        match r {
            // strict comparison keeps the lowest index among ties
            Ok(c) if best.as_ref().is_none_or(|b| c.time < b.time) => best = Some(c),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(best) => Ok(EntryChoice { best, candidate_times }),
        None => Err(last_err.unwrap_or_else(|| Error::Infeasible("no entry candidate".into()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leg {
    pub target: TargetId,
    pub entry: Point,
    pub direction: Direction,
    pub transit_time: f64,
    pub loiter_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TourTrajectory {
    pub trajectory: Trajectory,
    pub legs: Vec<Leg>,
}

/// Flight path for a whole tour: from rest at the depot, a transit and a full
/// loiter per target, leaving each circle where it was entered.
pub fn tour_trajectory(
    tour: &Tour,
    depot: &Depot,
    targets: &TargetSet,
    p: &QuadParams,
    k_entries: usize,
    segments: usize,
) -> Result<TourTrajectory> {
    let mut out = TourTrajectory {
        trajectory: Trajectory::default(),
        legs: Vec::with_capacity(tour.sequence.len()),
    };
    if tour.is_empty() {
        return Ok(out);
    }
    let mut state = PlanarState::at_rest(depot.position);
    for id in &tour.sequence {
        let t = targets.get(*id)?;
        let choice = transition_to_target(&state, t, p, k_entries, segments)?;
        let c = choice.best;
        out.trajectory.append(transition_trajectory(&c.transition, p));
        let loiter = loiter_trajectory(t, c.entry, c.direction, p)?;
        let loiter_time = loiter.total_time();
        state = loiter.end_state().expect("loiter has samples");
        out.trajectory.append(loiter);
        out.legs.push(Leg {
            target: *id,
            entry: c.entry,
            direction: c.direction,
            transit_time: c.time,
            loiter_time,
        });
    }
    if let Some(last) = out.trajectory.samples.last_mut() {
        last.phase = Phase::Loiter;
    }
    Ok(out)
}

/// Straight-line flight time at constant `speed`.
pub fn holonomic_transition_time(a: Point, b: Point, speed: f64) -> f64 {
    debug_assert!(speed > 0.0);
    let d = (b - a).norm();
    if d == 0.0 {
        0.0
    } else {
        d / speed
    }
}
