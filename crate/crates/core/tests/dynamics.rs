use approx::assert_abs_diff_eq;
use loiterplan::dynamics::{force_balance_residual, transition_dynamics, v_max, PlanarState, QuadParams, TiltSolution};
use loiterplan::model::Point;
use proptest::prelude::*;

fn quad(mass: f64, max_thrust: f64, drag_coeff: f64) -> QuadParams {
    QuadParams {
        mass,
        max_thrust,
        drag_coeff,
        gravity: 9.81,
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Recovers pitch from the drag balance and roll from the centripetal
/// balance by bisection at the given speed.
fn tilt_at(p: &QuadParams, r: f64, speed: f64) -> TiltSolution {
    let v2 = speed * speed;
    let pitch = bisect(0.0, std::f64::consts::FRAC_PI_2, |th| {
        p.max_thrust * th.sin() - 0.5 * p.drag_coeff * v2
    });
    let roll = bisect(0.0, std::f64::consts::FRAC_PI_2, |ph| {
        p.max_thrust * pitch.cos() * ph.sin() - p.mass * v2 / r
    });
    TiltSolution { roll, pitch, speed }
}

fn norm(r: [f64; 3]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn v_max_examples() {
    let hover = quad(1.0, 9.81, 0.5);
    assert_eq!(v_max(&hover, 3.0).unwrap(), 0.0);

    let p = QuadParams::default();
    let expected = ((625.0 - (1.5f64 * 9.81).powi(2)) / (0.25 + 0.0625)).powf(0.25);
    assert_abs_diff_eq!(v_max(&p, 3.0).unwrap(), expected, epsilon = 1e-12);
    assert_abs_diff_eq!(v_max(&p, 3.0).unwrap(), 6.01281, epsilon = 1e-5);
    assert!(v_max(&p, 6.0).unwrap() > v_max(&p, 3.0).unwrap());
    assert!(v_max(&p, 0.0).is_err());
    assert!(v_max(&quad(1.0, 5.0, 0.5), 3.0).is_err());
}

#[test]
fn residual_examples() {
    let p = quad(1.0, 9.81, 0.5);
    let hover = TiltSolution { roll: 0.0, pitch: 0.0, speed: 0.0 };
    assert_eq!(force_balance_residual(&p, 3.0, &hover), [0.0, 0.0, 0.0]);

    let p = QuadParams::default();
    let v = v_max(&p, 3.0).unwrap();
    assert!(norm(force_balance_residual(&p, 3.0, &tilt_at(&p, 3.0, v))) < 1e-9);
    assert!(norm(force_balance_residual(&p, 3.0, &tilt_at(&p, 3.0, v + 0.1))) > 1e-3);
}

#[test]
fn dynamics_examples() {
    let p = QuadParams::default();
    let rest = PlanarState::at_rest(Point::new(4.0, -2.0));
    let d = transition_dynamics(&rest, Point::ORIGIN, &p).unwrap();
    assert_eq!((d.velocity, d.acceleration), (Point::ORIGIN, Point::ORIGIN));

    let moving = PlanarState::new(Point::ORIGIN, Point::new(5.0, 0.0));
    let d = transition_dynamics(&moving, Point::ORIGIN, &p).unwrap();
    assert_abs_diff_eq!(d.acceleration.x, -25.0 * 0.5 / 3.0, epsilon = 1e-12);
    assert_eq!(d.acceleration.y, 0.0);

    assert_abs_diff_eq!(p.max_accel(), 13.474, epsilon = 1e-3);
    assert!(transition_dynamics(&rest, Point::new(p.max_accel() * 1.01, 0.0), &p).is_err());
}

fn valid_quad() -> impl Strategy<Value = QuadParams> {
    (0.5..5.0f64, 1.05..3.0f64, 0.0..2.0f64).prop_map(|(m, ratio, cd)| quad(m, ratio * m * 9.81, cd))
}

proptest! {
    #[test]
    fn v_max_satisfies_force_balance(p in valid_quad(), r in 0.5..50.0f64) {
        let v = v_max(&p, r).unwrap();
        let res = force_balance_residual(&p, r, &tilt_at(&p, r, v));
        prop_assert!(norm(res) < 1e-9, "residual {:?}", res);
    }

    #[test]
    fn v_max_monotone(p in valid_quad(), r in 0.5..50.0f64, f in 1.0..2.0f64) {
        let v = v_max(&p, r).unwrap();
        prop_assert!(v_max(&p, r * f).unwrap() >= v);
        let stronger = QuadParams { max_thrust: p.max_thrust * f, ..p };
        let draggier = QuadParams { drag_coeff: p.drag_coeff * f + 0.01, ..p };
        prop_assert!(v_max(&stronger, r).unwrap() >= v);
        prop_assert!(v_max(&draggier, r).unwrap() <= v);
        let heavier = QuadParams { mass: p.mass * f, ..p };
        if heavier.validate().is_ok() {
            prop_assert!(v_max(&heavier, r).unwrap() <= v);
        }
    }

    #[test]
    fn dynamics_translation_invariant_and_dissipative(
        p in valid_quad(),
        (x, y, vx, vy) in (-100.0..100.0f64, -100.0..100.0f64, -20.0..20.0f64, -20.0..20.0f64),
        (dx, dy) in (-50.0..50.0f64, -50.0..50.0f64),
    ) {
        let s = PlanarState::new(Point::new(x, y), Point::new(vx, vy));
        let shifted = PlanarState::new(Point::new(x + dx, y + dy), s.velocity);
        let a = transition_dynamics(&s, Point::ORIGIN, &p).unwrap();
        let b = transition_dynamics(&shifted, Point::ORIGIN, &p).unwrap();
        prop_assert_eq!(a, b);
        // d/dt ½|v|² = v·a
        prop_assert!(s.velocity.dot(a.acceleration) <= 0.0);
    }
}
