//! Minimum-time transition between two planar states by trapezoidal direct
//! transcription.
//!
//! The problem is solved in scaled units: lengths by `L`, accelerations by
//! the thrust margin `A`, so the control bound becomes the unit disk and the
//! drag coefficient becomes `k·L`. Boundary states are fixed and eliminated
//! from the decision vector; the final time enters as `T = T_ref·exp(τ)`.

use serde::Serialize;

use super::optim::{solve_augmented_lagrangian, AlSettings, BorderedBand, ConstrainedProblem};
use crate::dynamics::{drag_accel, PlanarState, QuadParams};
use crate::error::{Error, Result};
use crate::model::Point;

/// Below this distance and velocity mismatch two states are treated as equal.
pub const DEGENERATE_TOL: f64 = 1e-6;

pub const MIN_SEGMENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Knot {
    pub time: f64,
    pub state: PlanarState,
    pub control: Point,
}

/// Solver bookkeeping attached to every transition, and to the error when a
/// solve fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub segments: usize,
    pub attempts: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_time: f64,
    /// Largest trapezoidal defect over all nodes, physical units.
    pub max_defect: f64,
    /// Largest relative excess of |u| over the acceleration bound.
    pub control_excess: f64,
    pub stationarity: f64,
    pub message: String,
}

impl std::fmt::Display for SolveDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (segments={}, attempts={}, t_f={:.6}, max_defect={:.3e}, control_excess={:.3e}, stationarity={:.3e}, outer={}, inner={})",
            self.message,
            self.segments,
            self.attempts,
            self.final_time,
            self.max_defect,
            self.control_excess,
            self.stationarity,
            self.outer_iterations,
            self.inner_iterations
        )
    }
}

/// Solved transition: collocation knots in physical units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub final_time: f64,
    pub knots: Vec<Knot>,
    pub diagnostics: SolveDiagnostics,
}

impl Transition {
    pub(crate) fn degenerate(state: PlanarState) -> Self {
        Transition {
            final_time: 0.0,
            knots: vec![Knot {
                time: 0.0,
                state,
                control: Point::ORIGIN,
            }],
            diagnostics: SolveDiagnostics {
                segments: 0,
                attempts: 0,
                outer_iterations: 0,
                inner_iterations: 0,
                final_time: 0.0,
                max_defect: 0.0,
                control_excess: 0.0,
                stationarity: 0.0,
                message: "degenerate: start equals goal".into(),
            },
        }
    }

    pub fn segments(&self) -> usize {
        self.knots.len().saturating_sub(1)
    }

    /// Trapezoidal defects per segment: (position, velocity) norms.
    pub fn defects(&self, p: &QuadParams) -> Vec<(f64, f64)> {
        self.knots
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                let h = b.time - a.time;
                let acc = |k: &Knot| k.control + drag_accel(p, k.state.velocity);
                let dp = b.state.position - a.state.position - (a.state.velocity + b.state.velocity) * (0.5 * h);
                let dv = b.state.velocity - a.state.velocity - (acc(a) + acc(b)) * (0.5 * h);
                (dp.norm(), dv.norm())
            })
            .collect()
    }

    pub fn max_defect(&self, p: &QuadParams) -> f64 {
        self.defects(p)
            .into_iter()
            .fold(0.0, |m, (a, b)| m.max(a).max(b))
    }

    pub fn start(&self) -> PlanarState {
        self.knots[0].state
    }

    pub fn end(&self) -> PlanarState {
        self.knots[self.knots.len() - 1].state
    }

    /// State at time `t` from the collocation interpolant: each of position
    /// and velocity is the quadratic whose derivative interpolates its knot
    /// derivatives linearly, so both knots of a segment are hit exactly.
    pub fn state_at(&self, t: f64, p: &QuadParams) -> PlanarState {
        let t = t.clamp(0.0, self.final_time);
        if self.knots.len() == 1 {
            return self.knots[0].state;
        }
        let idx = self
            .knots
            .partition_point(|k| k.time <= t)
            .clamp(1, self.knots.len() - 1);
        let (a, b) = (&self.knots[idx - 1], &self.knots[idx]);
        let h = b.time - a.time;
        if h <= 0.0 {
            return b.state;
        }
        let s = t - a.time;
        let q = s * s / (2.0 * h);
        let fa = a.control + drag_accel(p, a.state.velocity);
        let fb = b.control + drag_accel(p, b.state.velocity);
        let position = a.state.position + a.state.velocity * s + (b.state.velocity - a.state.velocity) * q;
        let velocity = a.state.velocity + fa * s + (fb - fa) * q;
        PlanarState { position, velocity }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scale {
    length: f64,
    accel: f64,
}

impl Scale {
    fn velocity(&self) -> f64 {
        (self.length * self.accel).sqrt()
    }
    fn time(&self) -> f64 {
        (self.length / self.accel).sqrt()
    }
}

/// Trapezoidal transcription in scaled units.
///
/// Variables are stored node-major so the Hessian is banded: node 0 holds
/// its control, interior nodes hold `[p, v, u]`, node N holds its control,
/// and `τ` comes last.
struct Transcription {
    segments: usize,
    kappa: f64,
    start: [f64; 4],
    goal: [f64; 4],
    time_ref: f64,
    /// Lower bound on τ from a rigorous lower bound on the transfer time.
    tau_min: f64,
}

/// Local variable slots of one segment: state and control of both nodes, then τ.
const LOCAL: usize = 13;
const TAU_SLOT: usize = 12;

impl Transcription {
    fn node_offset(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            2 + 6 * (k - 1)
        }
    }

    fn tau_index(&self) -> usize {
        2 + 6 * (self.segments - 1) + 2
    }

    fn state_index(&self, k: usize) -> Option<usize> {
        (k > 0 && k < self.segments).then(|| self.node_offset(k))
    }

    fn control_index(&self, k: usize) -> usize {
        match self.state_index(k) {
            Some(i) => i + 4,
            None => self.node_offset(k),
        }
    }

    fn state(&self, x: &[f64], k: usize) -> [f64; 4] {
        match self.state_index(k) {
            Some(i) => [x[i], x[i + 1], x[i + 2], x[i + 3]],
            None if k == 0 => self.start,
            None => self.goal,
        }
    }

    fn control(&self, x: &[f64], k: usize) -> [f64; 2] {
        let i = self.control_index(k);
        [x[i], x[i + 1]]
    }

    fn final_time(&self, x: &[f64]) -> f64 {
        self.time_ref * x[self.tau_index()].exp()
    }

    fn drag(&self, v: [f64; 2]) -> [f64; 2] {
        let speed = v[0].hypot(v[1]);
        [self.kappa * speed * v[0], self.kappa * speed * v[1]]
    }

    /// ∂(κ|v|v)/∂v, symmetric.
    fn drag_jacobian(&self, v: [f64; 2]) -> [[f64; 2]; 2] {
        let speed = v[0].hypot(v[1]);
        if speed == 0.0 {
            return [[0.0; 2]; 2];
        }
        let k = self.kappa;
        [
            [k * (speed + v[0] * v[0] / speed), k * v[0] * v[1] / speed],
            [k * v[0] * v[1] / speed, k * (speed + v[1] * v[1] / speed)],
        ]
    }

    /// Σ_a w_a ∂²(κ|v|v)_a/∂v∂v
    fn drag_curvature(&self, v: [f64; 2], w: [f64; 2]) -> [[f64; 2]; 2] {
        let s = v[0].hypot(v[1]);
        if s < 1e-12 {
            return [[0.0; 2]; 2];
        }
        let mut out = [[0.0; 2]; 2];
        for (b, row) in out.iter_mut().enumerate() {
            for (c, entry) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..2 {
                    let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
                    acc += w[a]
                        * (d(a, b) * v[c] / s + (d(a, c) * v[b] + v[a] * d(b, c)) / s
                            - v[a] * v[b] * v[c] / (s * s * s));
                }
                *entry = self.kappa * acc;
            }
        }
        out
    }

    fn accel(&self, state: [f64; 4], u: [f64; 2]) -> [f64; 2] {
        let d = self.drag([state[2], state[3]]);
        [u[0] - d[0], u[1] - d[1]]
    }

    /// Global index of each local slot of segment `k`, `None` for fixed
    /// boundary states.
    fn local_indices(&self, k: usize) -> [Option<usize>; LOCAL] {
        let mut idx = [None; LOCAL];
        for (slot, node) in [(0, k), (6, k + 1)] {
            if let Some(i) = self.state_index(node) {
                for j in 0..4 {
                    idx[slot + j] = Some(i + j);
                }
            }
            let c = self.control_index(node);
            idx[slot + 4] = Some(c);
            idx[slot + 5] = Some(c + 1);
        }
        idx[TAU_SLOT] = Some(self.tau_index());
        idx
    }

    /// Defect values and their Jacobian over the local slots of segment `k`.
    fn segment(&self, x: &[f64], k: usize, half: f64) -> SegmentEval {
        let (sa, sb) = (self.state(x, k), self.state(x, k + 1));
        let (ua, ub) = (self.control(x, k), self.control(x, k + 1));
        let (aa, ab) = (self.accel(sa, ua), self.accel(sb, ub));
        let (ja, jb) = (self.drag_jacobian([sa[2], sa[3]]), self.drag_jacobian([sb[2], sb[3]]));
        let mut value = [0.0; 4];
        let mut jac = [[0.0; LOCAL]; 4];
        for a in 0..2 {
            value[a] = sb[a] - sa[a] - half * (sa[2 + a] + sb[2 + a]);
            value[2 + a] = sb[2 + a] - sa[2 + a] - half * (aa[a] + ab[a]);

            let rp = &mut jac[a];
            rp[a] = -1.0;
            rp[6 + a] = 1.0;
            rp[2 + a] = -half;
            rp[8 + a] = -half;
            rp[TAU_SLOT] = -half * (sa[2 + a] + sb[2 + a]);

            let rv = &mut jac[2 + a];
            for b in 0..2 {
                let eye = if a == b { 1.0 } else { 0.0 };
                rv[2 + b] = -eye + half * ja[a][b];
                rv[8 + b] = eye + half * jb[a][b];
            }
            rv[4 + a] = -half;
            rv[10 + a] = -half;
            rv[TAU_SLOT] = -half * (aa[a] + ab[a]);
        }
        SegmentEval { value, jac, sa, sb, ja, jb }
    }
}

struct SegmentEval {
    value: [f64; 4],
    jac: [[f64; LOCAL]; 4],
    sa: [f64; 4],
    sb: [f64; 4],
    ja: [[f64; 2]; 2],
    jb: [[f64; 2]; 2],
}

impl ConstrainedProblem for Transcription {
    fn dim(&self) -> usize {
        self.tau_index() + 1
    }

    fn num_eq(&self) -> usize {
        4 * self.segments
    }

    fn num_ineq(&self) -> usize {
        self.segments + 2
    }

    fn bandwidth(&self) -> usize {
        11
    }

    fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let t = self.final_time(x);
        grad[self.tau_index()] = t;
        t
    }

    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let half = 0.5 * self.final_time(x) / self.segments as f64;
        for k in 0..self.segments {
            let seg = self.segment(x, k, half);
            eq[4 * k..4 * k + 4].copy_from_slice(&seg.value);
        }
        let n = self.segments;
        for (k, g) in ineq[..=n].iter_mut().enumerate() {
            let u = self.control(x, k);
            *g = u[0] * u[0] + u[1] * u[1] - 1.0;
        }
        ineq[n + 1] = self.tau_min - x[self.tau_index()];
    }

    fn add_jacobian_transpose(&self, x: &[f64], w_eq: &[f64], w_ineq: &[f64], grad: &mut [f64]) {
        let half = 0.5 * self.final_time(x) / self.segments as f64;
        for k in 0..self.segments {
            let seg = self.segment(x, k, half);
            let w = &w_eq[4 * k..4 * k + 4];
            for (slot, idx) in self.local_indices(k).iter().enumerate() {
                if let Some(i) = idx {
                    grad[*i] += (0..4).map(|r| seg.jac[r][slot] * w[r]).sum::<f64>();
                }
            }
        }
        let n = self.segments;
        for (k, wk) in w_ineq[..=n].iter().enumerate() {
            if *wk != 0.0 {
                let c = self.control_index(k);
                grad[c] += 2.0 * x[c] * wk;
                grad[c + 1] += 2.0 * x[c + 1] * wk;
            }
        }
        grad[self.tau_index()] -= w_ineq[n + 1];
    }

    fn add_augmented_hessian(
        &self,
        x: &[f64],
        w_eq: &[f64],
        w_ineq: &[f64],
        penalty: f64,
        hess: &mut BorderedBand,
    ) {
        let tau = self.tau_index();
        hess.add(tau, tau, self.final_time(x));
        let half = 0.5 * self.final_time(x) / self.segments as f64;
        for k in 0..self.segments {
            let seg = self.segment(x, k, half);
            let w = &w_eq[4 * k..4 * k + 4];
            let idx = self.local_indices(k);
            let mut local = [[0.0; LOCAL]; LOCAL];
            // μ·JᵀJ
            for i in 0..LOCAL {
                for j in 0..=i {
                    local[i][j] = penalty * (0..4).map(|r| seg.jac[r][i] * seg.jac[r][j]).sum::<f64>();
                }
            }
            // Σ w_r ∇²c_r
            let (wp, wv) = ([w[0], w[1]], [w[2], w[3]]);
            local[TAU_SLOT][TAU_SLOT] += (0..4).map(|r| w[r] * seg.jac[r][TAU_SLOT]).sum::<f64>();
            for (vslot, jf) in [(2, seg.ja), (8, seg.jb)] {
                for b in 0..2 {
                    local[TAU_SLOT][vslot + b] += -half * wp[b] + half * (wv[0] * jf[0][b] + wv[1] * jf[1][b]);
                }
            }
            for uslot in [4, 10] {
                for b in 0..2 {
                    local[TAU_SLOT][uslot + b] += -half * wv[b];
                }
            }
            for (vslot, st) in [(2, seg.sa), (8, seg.sb)] {
                let curv = self.drag_curvature([st[2], st[3]], wv);
                for b in 0..2 {
                    for c in 0..=b {
                        local[vslot + b][vslot + c] += half * curv[b][c];
                    }
                }
            }
            for i in 0..LOCAL {
                let Some(gi) = idx[i] else { continue };
                for j in 0..=i {
                    let Some(gj) = idx[j] else { continue };
                    if local[i][j] != 0.0 {
                        hess.add(gi, gj, local[i][j]);
                    }
                }
            }
        }
        let n = self.segments;
        if w_ineq[n + 1] > 0.0 {
            hess.add(tau, tau, penalty);
        }
        for (k, wk) in w_ineq[..=n].iter().enumerate() {
            if *wk > 0.0 {
                let c = self.control_index(k);
                let u = [x[c], x[c + 1]];
                for a in 0..2 {
                    for b in 0..=a {
                        let eye = if a == b { 2.0 * wk } else { 0.0 };
                        hess.add(c + a, c + b, eye + penalty * 4.0 * u[a] * u[b]);
                    }
                }
            }
        }
    }
}

fn scaled(state: &PlanarState, origin: Point, scale: &Scale) -> [f64; 4] {
    let p = (state.position - origin) * (1.0 / scale.length);
    let v = state.velocity * (1.0 / scale.velocity());
    [p.x, p.y, v.x, v.y]
}

#[derive(Debug, Clone, Copy)]
enum Guess {
    /// Straight line between the endpoints at constant speed.
    StraightLine { time_factor: f64 },
    /// Cubic Hermite blend honoring the boundary velocities.
    Hermite { time_factor: f64 },
}

fn initial_guess(tr: &Transcription, guess: Guess) -> Vec<f64> {
    let n = tr.segments;
    let mut x = vec![0.0; tr.dim()];
    let (t, hermite) = match guess {
        Guess::StraightLine { time_factor } => (tr.time_ref * time_factor, false),
        Guess::Hermite { time_factor } => (tr.time_ref * time_factor, true),
    };
    x[tr.tau_index()] = (t / tr.time_ref).ln();
    let (s0, s1) = (tr.start, tr.goal);
    let mut states = vec![[0.0; 4]; n + 1];
    for (k, st) in states.iter_mut().enumerate() {
        let s = k as f64 / n as f64;
        if k == 0 {
            *st = s0;
        } else if k == n {
            *st = s1;
        } else if hermite {
            let (h00, h10, h01, h11) = (
                2.0 * s.powi(3) - 3.0 * s * s + 1.0,
                s.powi(3) - 2.0 * s * s + s,
                -2.0 * s.powi(3) + 3.0 * s * s,
                s.powi(3) - s * s,
            );
            let (d00, d10, d01, d11) = (
                6.0 * s * s - 6.0 * s,
                3.0 * s * s - 4.0 * s + 1.0,
                -6.0 * s * s + 6.0 * s,
                3.0 * s * s - 2.0 * s,
            );
            for a in 0..2 {
                st[a] = h00 * s0[a] + h10 * t * s0[a + 2] + h01 * s1[a] + h11 * t * s1[a + 2];
                st[a + 2] = (d00 * s0[a] + d10 * t * s0[a + 2] + d01 * s1[a] + d11 * t * s1[a + 2]) / t;
            }
        } else {
            for a in 0..2 {
                st[a] = s0[a] + s * (s1[a] - s0[a]);
                st[a + 2] = (s1[a] - s0[a]) / t;
            }
        }
    }
    for (k, st) in states.iter().enumerate() {
        if let Some(i) = tr.state_index(k) {
            x[i..i + 4].copy_from_slice(st);
        }
    }
    let h = t / n as f64;
    for k in 0..=n {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n));
        let span = (hi - lo) as f64 * h;
        let v = [states[k][2], states[k][3]];
        let d = tr.drag(v);
        let mut u = [
            (states[hi][2] - states[lo][2]) / span + d[0],
            (states[hi][3] - states[lo][3]) / span + d[1],
        ];
        let norm = u[0].hypot(u[1]);
        if norm > 0.9 {
            u = [u[0] * 0.9 / norm, u[1] * 0.9 / norm];
        }
        let c = tr.control_index(k);
        x[c] = u[0];
        x[c + 1] = u[1];
    }
    x
}

/// Minimum-time transfer from `start` to `goal` under the planar model.
pub fn min_time_transition(
    start: &PlanarState,
    goal: &PlanarState,
    p: &QuadParams,
    segments: usize,
) -> Result<Transition> {
    p.validate()?;
    if segments < MIN_SEGMENTS {
        return Err(Error::invalid(format!(
            "at least {MIN_SEGMENTS} collocation segments required, got {segments}"
        )));
    }
    if !start.is_finite() || !goal.is_finite() {
        return Err(Error::invalid("boundary states must be finite"));
    }
    let speed_cap = p.straight_speed_bound();
    for (name, s) in [("start", start), ("goal", goal)] {
        let v = s.velocity.norm();
        if v > speed_cap * (1.0 + 1e-9) {
            return Err(Error::Infeasible(format!(
                "{name} speed {v} exceeds sustainable speed {speed_cap}"
            )));
        }
    }
    let gap = (goal.position - start.position).norm();
    let dv = (goal.velocity - start.velocity).norm();
    if gap < DEGENERATE_TOL && dv < DEGENERATE_TOL {
        return Ok(Transition::degenerate(*start));
    }

    let accel = p.max_accel();
    let length = [
        gap,
        start.velocity.norm().powi(2) / accel,
        goal.velocity.norm().powi(2) / accel,
        dv * dv / accel,
    ]
    .into_iter()
    .fold(1e-3, f64::max);
    let scale = Scale { length, accel };
    let start_n = scaled(start, start.position, &scale);
    let goal_n = scaled(goal, start.position, &scale);
    let dist_n = gap / length;
    let dv_n = dv / scale.velocity();
    let time_ref = 2.0 * dist_n.sqrt() + dv_n + 0.1;
    // Speed never exceeds the straight-flight bound and the net acceleration
    // never exceeds twice the thrust margin, so neither the distance nor the
    // velocity change can be covered faster than this.
    let speed_cap_n = speed_cap / scale.velocity();
    let reach = |v0: f64| 0.5 * ((v0 * v0 + 4.0 * dist_n).sqrt() - v0);
    let v0_n = start.velocity.norm() / scale.velocity();
    let vf_n = goal.velocity.norm() / scale.velocity();
    let time_floor = 0.9
        * (dist_n / speed_cap_n)
            .max(0.5 * dv_n)
            .max(reach(v0_n))
            .max(reach(vf_n))
            .max(1e-6);
    let tr = Transcription {
        segments,
        kappa: p.drag_per_mass() * length,
        start: start_n,
        goal: goal_n,
        time_ref,
        tau_min: (time_floor / time_ref).ln(),
    };

    let guesses = [
        Guess::StraightLine { time_factor: 1.0 },
        Guess::Hermite { time_factor: 1.0 },
        Guess::StraightLine { time_factor: 2.0 },
        Guess::Hermite { time_factor: 2.0 },
    ];
    let settings = AlSettings::default();
    let mut best: Option<Transition> = None;
    let mut last_diag = None;
    for (attempt, guess) in guesses.iter().enumerate() {
        let mut x = initial_guess(&tr, *guess);
        let report = solve_augmented_lagrangian(&tr, &mut x, &settings);
        let transition = unscale(&tr, &x, &scale, (start, goal), p, &report, attempt + 1);
        let ok = report.converged
            && transition.diagnostics.max_defect < DEFECT_ACCEPT
            && transition.diagnostics.control_excess < 1e-9;
        if ok {
            best = Some(transition);
            break;
        }
        last_diag = Some(transition.diagnostics);
    }
    match best {
        Some(t) => Ok(t),
        None => {
            let mut diag = last_diag.expect("at least one attempt");
            diag.message = "no initial guess converged".into();
            Err(Error::SolverFailed(Box::new(diag)))
        }
    }
}

/// Acceptance threshold on the physical trapezoidal defect.
const DEFECT_ACCEPT: f64 = 1e-7;

fn unscale(
    tr: &Transcription,
    x: &[f64],
    scale: &Scale,
    boundary: (&PlanarState, &PlanarState),
    p: &QuadParams,
    report: &super::optim::AlReport,
    attempts: usize,
) -> Transition {
    let n = tr.segments;
    let origin = boundary.0.position;
    let final_time = tr.final_time(x) * scale.time();
    let knots: Vec<Knot> = (0..=n)
        .map(|k| {
            // boundary states are the exact inputs rather than scaled round trips
            let state = match k {
                0 => *boundary.0,
                k if k == n => *boundary.1,
                _ => {
                    let s = tr.state(x, k);
                    PlanarState {
                        position: origin + Point::new(s[0], s[1]) * scale.length,
                        velocity: Point::new(s[2], s[3]) * scale.velocity(),
                    }
                }
            };
            let u = tr.control(x, k);
            Knot {
                time: if k == n { final_time } else { final_time * k as f64 / n as f64 },
                state,
                control: Point::new(u[0], u[1]) * scale.accel,
            }
        })
        .collect();
    let control_excess = knots
        .iter()
        .map(|k| k.control.norm() / scale.accel - 1.0)
        .fold(0.0, f64::max);
    let mut transition = Transition {
        final_time,
        knots,
        diagnostics: SolveDiagnostics {
            segments: n,
            attempts,
            outer_iterations: report.outer_iterations,
            inner_iterations: report.inner_iterations,
            final_time,
            max_defect: 0.0,
            control_excess,
            stationarity: report.stationarity,
            message: if report.converged { "converged".into() } else { "not converged".into() },
        },
    };
    transition.diagnostics.max_defect = transition.max_defect(p);
    transition
}
