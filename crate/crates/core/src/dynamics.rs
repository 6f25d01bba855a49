//! Vehicle model: loiter speed from the thrust/drag force balance and the
//! planar point-mass model used for transitions between loiter circles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Point;

/// Relative slack allowed when checking a command against the thrust margin.
pub const ACCEL_BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// N
    pub max_thrust: f64,
    /// N·s²/m², drag force is ½·c_d·|v|²
    pub drag_coeff: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            mass: 1.5,
            max_thrust: 25.0,
            drag_coeff: 0.5,
            gravity: 9.81,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mass, self.max_thrust, self.drag_coeff, self.gravity]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("vehicle parameters must be finite"));
        }
        if self.mass <= 0.0 {
            return Err(Error::invalid(format!("mass must be positive, got {}", self.mass)));
        }
        if self.gravity <= 0.0 {
            return Err(Error::invalid(format!("gravity must be positive, got {}", self.gravity)));
        }
        if self.drag_coeff < 0.0 {
            return Err(Error::invalid(format!(
                "drag coefficient must be non-negative, got {}",
                self.drag_coeff
            )));
        }
        if self.max_thrust <= self.weight() {
            return Err(Error::Infeasible(format!(
                "max thrust {} N cannot exceed weight {} N",
                self.max_thrust,
                self.weight()
            )));
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Horizontal acceleration available after holding altitude: sqrt((T/m)² − g²).
    pub fn max_accel(&self) -> f64 {
        let ratio = self.max_thrust / self.mass;
        (ratio * ratio - self.gravity * self.gravity).max(0.0).sqrt()
    }

    /// Coefficient k in the drag deceleration k·|v|·v.
    pub fn drag_per_mass(&self) -> f64 {
        self.drag_coeff / (2.0 * self.mass)
    }

    /// Highest sustainable straight-line speed: the pitch-only force balance
    /// T·sinθ = ½c_d v², T·cosθ = mg. Infinite without drag.
    pub fn straight_speed_bound(&self) -> f64 {
        if self.drag_coeff == 0.0 {
            return f64::INFINITY;
        }
        let margin = (self.max_thrust.powi(2) - self.weight().powi(2)).max(0.0).sqrt();
        (2.0 * margin / self.drag_coeff).sqrt()
    }
}

/// Maximum speed on a loiter circle of radius `r`:
/// `[(T² − m²g²) / (m²/r² + c_d²/4)]^(1/4)`.
pub fn v_max(p: &QuadParams, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("loiter radius must be positive, got {r}")));
    }
    let margin = p.max_thrust * p.max_thrust - p.weight() * p.weight();
    if margin < 0.0 {
        return Err(Error::Infeasible(format!(
            "max thrust {} N is below weight {} N",
            p.max_thrust,
            p.weight()
        )));
    }
    let denom = (p.mass / r).powi(2) + p.drag_coeff * p.drag_coeff / 4.0;
    Ok((margin / denom).sqrt().sqrt())
}

/// Roll, pitch and speed of a vehicle circling a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltSolution {
    pub roll: f64,
    pub pitch: f64,
    pub speed: f64,
}

/// Residuals of the vertical, radial and tangential force balance for
/// steady circling at radius `r`. All three vanish at equilibrium.
pub fn force_balance_residual(p: &QuadParams, r: f64, sol: &TiltSolution) -> [f64; 3] {
    let thrust = p.max_thrust;
    let (sr, cr) = sol.roll.sin_cos();
    let (sp, cp) = sol.pitch.sin_cos();
    let v2 = sol.speed * sol.speed;
    [
        thrust * cr * cp - p.weight(),
        thrust * cp * sr - p.mass * v2 / r,
        thrust * sp - 0.5 * p.drag_coeff * v2,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarState {
    pub position: Point,
    pub velocity: Point,
}

impl PlanarState {
    pub fn new(position: Point, velocity: Point) -> Self {
        PlanarState { position, velocity }
    }

    pub fn at_rest(position: Point) -> Self {
        PlanarState {
            position,
            velocity: Point::ORIGIN,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub velocity: Point,
    pub acceleration: Point,
}

/// Drag deceleration −k·|v|·v.
pub(crate) fn drag_accel(p: &QuadParams, velocity: Point) -> Point {
    velocity * (-p.drag_per_mass() * velocity.norm())
}

/// Planar point mass with quadratic drag, driven by a commanded horizontal
/// acceleration bounded by [`QuadParams::max_accel`].
pub fn transition_dynamics(
    s: &PlanarState,
    accel_cmd: Point,
    p: &QuadParams,
) -> Result<StateDerivative> {
    let a_max = p.max_accel();
    let cmd = accel_cmd.norm();
    if !cmd.is_finite() || cmd > a_max * (1.0 + ACCEL_BOUND_SLACK) {
        return Err(Error::Infeasible(format!(
            "acceleration command {cmd} exceeds bound {a_max}"
        )));
    }
    Ok(StateDerivative {
        velocity: s.velocity,
        acceleration: accel_cmd + drag_accel(p, s.velocity),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Newton iteration on all three force-balance equations for
    /// (roll, pitch, speed); knows nothing about the closed form.
    fn solve_force_balance(p: &QuadParams, r: f64) -> TiltSolution {
        let mut x = [0.3, 0.05, 1.0];
        for _ in 0..100 {
            let sol = TiltSolution { roll: x[0], pitch: x[1], speed: x[2] };
            let f = force_balance_residual(p, r, &sol);
            let (sr, cr) = x[0].sin_cos();
            let (sp, cp) = x[1].sin_cos();
            let t = p.max_thrust;
            let jac = [
                [-t * sr * cp, -t * cr * sp, 0.0],
                [t * cr * cp, -t * sp * sr, -2.0 * p.mass * x[2] / r],
                [0.0, t * cp, -p.drag_coeff * x[2]],
            ];
            let dx = solve3(jac, f);
            let mut step = 1.0;
            // damp until speed stays positive
            while x[2] - step * dx[2] <= 0.0 {
                step *= 0.5;
            }
            for i in 0..3 {
                x[i] -= step * dx[i];
            }
            if f.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-14 {
                break;
            }
        }
        TiltSolution { roll: x[0], pitch: x[1], speed: x[2] }
    }

    fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        let mut out = [0.0; 3];
        for (col, o) in out.iter_mut().enumerate() {
            let mut m = a;
            for row in 0..3 {
                m[row][col] = b[row];
            }
            *o = det(m) / d;
        }
        out
    }

    #[test]
    fn v_max_zero_margin() {
        let p = QuadParams { max_thrust: 1.5 * 9.81, ..QuadParams::default() };
        assert_eq!(v_max(&p, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn v_max_reference_value() {
        let p = QuadParams::default();
        let expected = ((625.0 - 1.5f64.powi(2) * 9.81f64.powi(2)) / (0.25 + 0.0625)).powf(0.25);
        assert_abs_diff_eq!(v_max(&p, 3.0).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(v_max(&p, 3.0).unwrap(), 6.01281, epsilon = 1e-5);
    }

    #[test]
    fn v_max_rejects_weak_thrust_and_bad_radius() {
        let weak = QuadParams { max_thrust: 10.0, ..QuadParams::default() };
        assert!(matches!(v_max(&weak, 3.0), Err(Error::Infeasible(_))));
        assert!(v_max(&QuadParams::default(), 0.0).is_err());
        assert!(weak.validate().is_err());
    }

    #[test]
    fn v_max_grows_with_radius() {
        let p = QuadParams::default();
        assert!(v_max(&p, 6.0).unwrap() > v_max(&p, 3.0).unwrap());
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = QuadParams { max_thrust: 1.5 * 9.81, ..QuadParams::default() };
        let res = force_balance_residual(&p, 3.0, &TiltSolution { roll: 0.0, pitch: 0.0, speed: 0.0 });
        assert_eq!(res, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn closed_form_matches_force_balance_root() {
        let p = QuadParams::default();
        let sol = solve_force_balance(&p, 3.0);
        let v = v_max(&p, 3.0).unwrap();
        assert_abs_diff_eq!(sol.speed, v, epsilon = 1e-9);
        let res = force_balance_residual(&p, 3.0, &TiltSolution { speed: v, ..sol });
        assert!(res.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-9);

        let off = force_balance_residual(&p, 3.0, &TiltSolution { speed: v + 0.1, ..sol });
        assert!(off.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3);
    }

    #[test]
    fn derived_accelerations() {
        let p = QuadParams::default();
        assert_abs_diff_eq!(p.max_accel(), 13.474, epsilon = 1e-3);
        let rest = transition_dynamics(&PlanarState::default(), Point::ORIGIN, &p).unwrap();
        assert_eq!(rest.velocity, Point::ORIGIN);
        assert_eq!(rest.acceleration, Point::ORIGIN);

        let moving = PlanarState::new(Point::ORIGIN, Point::new(5.0, 0.0));
        let d = transition_dynamics(&moving, Point::ORIGIN, &p).unwrap();
        assert_abs_diff_eq!(d.acceleration.x, -25.0 * 0.5 / 3.0, epsilon = 1e-12);
        assert_eq!(d.acceleration.y, 0.0);
        assert_eq!(d.velocity, moving.velocity);
    }

    #[test]
    fn command_above_bound_rejected() {
        let p = QuadParams::default();
        let cmd = Point::new(p.max_accel() * 1.01, 0.0);
        assert!(transition_dynamics(&PlanarState::default(), cmd, &p).is_err());
        let edge = Point::new(p.max_accel(), 0.0);
        assert!(transition_dynamics(&PlanarState::default(), edge, &p).is_ok());
    }

    #[test]
    fn loiter_at_v_max_saturates_thrust_margin() {
        // centripetal + drag deceleration at v_max use exactly the available acceleration
        let p = QuadParams::default();
        let r = 3.0;
        let v = v_max(&p, r).unwrap();
        let needed = (v * v / r).hypot(p.drag_per_mass() * v * v);
        assert_abs_diff_eq!(needed, p.max_accel(), epsilon = 1e-9);
    }

    fn params() -> impl Strategy<Value = QuadParams> {
        (0.5f64..5.0, 1.2f64..4.0, 0.0f64..2.0, 5.0f64..15.0).prop_map(|(mass, ratio, cd, g)| QuadParams {
            mass,
            max_thrust: ratio * mass * g,
            drag_coeff: cd,
            gravity: g,
        })
    }

    proptest! {
        #[test]
        fn v_max_monotonicity(p in params(), r in 0.5f64..20.0, bump in 1.001f64..2.0) {
            let base = v_max(&p, r).unwrap();
            prop_assert!(v_max(&p, r * bump).unwrap() >= base);
            let stronger = QuadParams { max_thrust: p.max_thrust * bump, ..p };
            prop_assert!(v_max(&stronger, r).unwrap() >= base);
            let draggier = QuadParams { drag_coeff: p.drag_coeff * bump + 1e-3, ..p };
            prop_assert!(v_max(&draggier, r).unwrap() <= base);
            // heavier with unchanged thrust, provided it can still hover
            let heavier = QuadParams { mass: p.mass * bump, ..p };
            if heavier.max_thrust >= heavier.weight() {
                prop_assert!(v_max(&heavier, r).unwrap() <= base);
            }
        }

        #[test]
        fn drag_dissipates_and_is_translation_invariant(
            p in params(),
            pos in (-100.0f64..100.0, -100.0f64..100.0),
            vel in (-20.0f64..20.0, -20.0f64..20.0),
            shift in (-100.0f64..100.0, -100.0f64..100.0),
        ) {
            let s = PlanarState::new(Point::new(pos.0, pos.1), Point::new(vel.0, vel.1));
            let d = transition_dynamics(&s, Point::ORIGIN, &p).unwrap();
            // d/dt ½|v|² = v·a
            prop_assert!(s.velocity.dot(d.acceleration) <= 0.0);
            let moved = PlanarState::new(s.position + Point::new(shift.0, shift.1), s.velocity);
            let d2 = transition_dynamics(&moved, Point::ORIGIN, &p).unwrap();
            prop_assert_eq!(d, d2);
        }
    }
}
