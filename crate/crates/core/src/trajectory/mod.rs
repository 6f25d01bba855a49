mod collocation;
mod flight;
pub(crate) mod optim;

pub use collocation::{min_time_transition, Knot, SolveDiagnostics, Transition, DEGENERATE_TOL, MIN_SEGMENTS};
pub use flight::{
    entry_points, entry_state, holonomic_transition_time, loiter_trajectory, tour_trajectory, transition_to_target,
    transition_trajectory, Direction, EntryCandidate, EntryChoice, Leg, Phase, Sample, TourTrajectory, Trajectory,
    DEFAULT_ENTRIES, DEFAULT_SEGMENTS, SAMPLE_RATE,
};
