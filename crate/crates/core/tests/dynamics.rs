use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use reach_irl::arm::{self, ArmParams, JointState};

/// Time derivative of the mass matrix, written out independently from the
/// closed form `M(q2)`.
fn mass_matrix_rate(p: &ArmParams, q2: f64, dq2: f64) -> Matrix2<f64> {
    let k = -p.m2 * p.l1 * p.lc2 * q2.sin() * dq2;
    Matrix2::new(2.0 * k, k, k, 0.0)
}

fn rk4_step(p: &ArmParams, x: &JointState, u: &Vector2<f64>, dt: f64) -> JointState {
    let f = |s: &JointState| -> (Vector2<f64>, Vector2<f64>) { (s.dq, arm::forward_dynamics(p, s, u).unwrap()) };
    let shift = |s: &JointState, d: &(Vector2<f64>, Vector2<f64>), h: f64| JointState::new(s.q + d.0 * h, s.dq + d.1 * h);
    let k1 = f(x);
    let k2 = f(&shift(x, &k1, dt / 2.0));
    let k3 = f(&shift(x, &k2, dt / 2.0));
    let k4 = f(&shift(x, &k3, dt));
    JointState::new(
        x.q + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0),
        x.dq + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0),
    )
}

fn euler_rollout(p: &ArmParams, x0: JointState, u: Vector2<f64>, dt: f64, steps: usize) -> JointState {
    (0..steps).fold(x0, |x, _| arm::step_euler(p, &x, &u, dt).unwrap())
}

fn params_strategy() -> impl Strategy<Value = ArmParams> {
    (0.15..0.5f64, 0.15..0.5f64, 0.5..4.0f64, 0.3..3.0f64).prop_map(|(l1, l2, m1, m2)| ArmParams::uniform_rods(l1, l2, m1, m2))
}

proptest! {
    #[test]
    fn mass_matrix_rate_minus_twice_coriolis_is_skew(
        p in params_strategy(),
        q1 in -3.0..3.0f64, q2 in -3.0..3.0f64,
        dq1 in -10.0..10.0f64, dq2 in -10.0..10.0f64,
    ) {
        let q = Vector2::new(q1, q2);
        let dq = Vector2::new(dq1, dq2);
        let n = mass_matrix_rate(&p, q2, dq2) - arm::coriolis_matrix(&p, &q, &dq) * 2.0;
        prop_assert!((n + n.transpose()).amax() < 1e-8);
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(p in params_strategy(), q1 in -3.0..3.0f64, q2 in -3.0..3.0f64) {
        let m = arm::mass_matrix(&p, &Vector2::new(q1, q2));
        prop_assert!((m - m.transpose()).amax() == 0.0);
        prop_assert!(m[(0, 0)] > 0.0 && m.determinant() > 0.0);
    }

    #[test]
    fn inverse_dynamics_inverts_forward_dynamics(
        p in params_strategy(),
        q1 in -3.0..3.0f64, q2 in -3.0..3.0f64,
        dq1 in -8.0..8.0f64, dq2 in -8.0..8.0f64,
        u1 in -20.0..20.0f64, u2 in -20.0..20.0f64,
    ) {
        let x = JointState::new(Vector2::new(q1, q2), Vector2::new(dq1, dq2));
        let u = Vector2::new(u1, u2);
        let ddq = arm::forward_dynamics(&p, &x, &u).unwrap();
        let back = arm::inverse_dynamics(&p, &x.q, &x.dq, &ddq);
        prop_assert!((back - u).amax() < 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences(p in params_strategy(), q1 in -3.0..3.0f64, q2 in -3.0..3.0f64) {
        let q = Vector2::new(q1, q2);
        let j = arm::hand_jacobian(&p, &q);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            let fd = (arm::forward_kinematics(&p, &(q + e)) - arm::forward_kinematics(&p, &(q - e))) / (2.0 * h);
            let col = j.column(k);
            let scale = col.norm().max(1e-3);
            prop_assert!((fd - col).norm() / scale < 1e-6);
        }
    }
}

#[test]
fn energy_drift_without_gravity_or_torque_is_small() {
    let p = ArmParams::default().with_gravity(0.0);
    let x0 = JointState::new(Vector2::new(0.4, 1.2), Vector2::new(1.0, -1.5));
    let e0 = arm::mechanical_energy(&p, &x0);
    let x1 = euler_rollout(&p, x0, Vector2::zeros(), 1e-3, 1000);
    let drift = (arm::mechanical_energy(&p, &x1) - e0).abs();
    assert!(drift < 0.01 * e0, "drift {drift} of {e0}");
}

#[test]
fn euler_error_at_fixed_time_is_first_order() {
    let p = ArmParams::default();
    let x0 = JointState::new(Vector2::new(0.8, 1.0), Vector2::new(0.5, -0.3));
    let u = Vector2::new(1.0, 0.5);
    let horizon = 0.2;
    let reference = (0..20000).fold(x0, |x, _| rk4_step(&p, &x, &u, horizon / 20000.0));
    let error = |steps: usize| {
        let x = euler_rollout(&p, x0, u, horizon / steps as f64, steps);
        (x.q - reference.q).amax()
    };
    let errors: Vec<f64> = [50, 100, 200, 400].iter().map(|&n| error(n)).collect();
    for pair in errors.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((ratio - 2.0).abs() < 0.15, "halving ratio {ratio} in {errors:?}");
    }
}

#[test]
fn single_euler_step_has_second_order_local_error() {
    let p = ArmParams::default();
    let x0 = JointState::new(Vector2::new(0.8, 1.0), Vector2::new(0.5, -0.3));
    let u = Vector2::new(1.0, 0.5);
    let local = |dt: f64| {
        let e = arm::step_euler(&p, &x0, &u, dt).unwrap();
        let r = rk4_step(&p, &x0, &u, dt);
        (e.q - r.q).amax()
    };
    let ratio = local(1e-2) / local(5e-3);
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
}
