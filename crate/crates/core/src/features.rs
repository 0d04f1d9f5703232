//! The seven discretized biomechanical cost features, integrated per time
//! window.
//!
//! | row | feature              | integrand                 |
//! |-----|----------------------|---------------------------|
//! | 0   | Cartesian velocity   | `ṖᵀṖ`, `Ṗ = J(q) q̇`       |
//! | 1   | energy               | `√((q̇ᵀu)² + ε²)`          |
//! | 2   | geodesic             | `q̇ᵀ M(q) q̇`               |
//! | 3   | joint acceleration   | `q̈ᵀq̈`, forward dynamics   |
//! | 4   | torque change        | `τ̇ᵀτ̇`, forward difference |
//! | 5   | joint velocity       | `q̇ᵀq̇`                     |
//! | 6   | joint torque         | `uᵀu`                     |
//!
//! Integrals are left Riemann sums with weight `dt` over the control knots.
//! The model is torque controlled, so `τ ≡ u`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::arm::{self, ArmParams, Control, JointState};
use crate::dual::{Dual, HyperDual, Real};
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 7;

/// Smoothing used for the absolute value in the energy feature.
pub const SMOOTH_ABS_EPS: f64 = 1e-6;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "cartesian_velocity",
    "energy",
    "geodesic",
    "joint_acceleration",
    "torque_change",
    "joint_velocity",
    "joint_torque",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    CartesianVelocity = 0,
    Energy = 1,
    Geodesic = 2,
    JointAcceleration = 3,
    TorqueChange = 4,
    JointVelocity = 5,
    JointTorque = 6,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::CartesianVelocity,
        Feature::Energy,
        Feature::Geodesic,
        Feature::JointAcceleration,
        Feature::TorqueChange,
        Feature::JointVelocity,
        Feature::JointTorque,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FEATURE_NAMES[self.index()]
    }
}

pub fn smooth_abs(z: f64) -> f64 {
    (z * z + SMOOTH_ABS_EPS * SMOOTH_ABS_EPS).sqrt()
}

/// Split of the horizon into `n_windows` windows of `samples_per_window`
/// control knots each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionLayout {
    pub n_windows: usize,
    pub samples_per_window: usize,
}

impl SectionLayout {
    pub fn new(n_windows: usize, samples_per_window: usize) -> Result<Self> {
        let layout = SectionLayout {
            n_windows,
            samples_per_window,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_windows < 1 {
            return Err(Error::Contract("layout needs at least one window".into()));
        }
        if self.samples_per_window < 2 {
            return Err(Error::Contract(format!(
                "layout needs at least 2 samples per window, got {}",
                self.samples_per_window
            )));
        }
        Ok(())
    }

    /// Number of control knots `N = N_w · N_s`.
    pub fn n_controls(&self) -> usize {
        self.n_windows * self.samples_per_window
    }

    /// Window containing control knot `t`.
    #[inline]
    pub fn window_of(&self, t: usize) -> usize {
        t / self.samples_per_window
    }

    pub fn check(&self, traj: &Trajectory) -> Result<()> {
        self.validate()?;
        if traj.controls.len() != self.n_controls() {
            return Err(Error::Contract(format!(
                "layout expects {} controls ({} x {}), trajectory has {}",
                self.n_controls(),
                self.n_windows,
                self.samples_per_window,
                traj.controls.len()
            )));
        }
        Ok(())
    }
}

/// Discrete state and control sequences on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<JointState>,
    pub controls: Vec<Control>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<JointState>, controls: Vec<Control>, dt: f64) -> Result<Self> {
        let traj = Trajectory {
            states,
            controls,
            dt,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.controls.len() + 1 {
            return Err(Error::Contract(format!(
                "{} states for {} controls",
                self.states.len(),
                self.controls.len()
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Contract(format!("timestep must be positive, got {}", self.dt)));
        }
        if !self.states.iter().all(JointState::is_finite)
            || !self.controls.iter().all(|u| u.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Contract("trajectory has non-finite entries".into()));
        }
        Ok(())
    }

    /// Euler rollout of `controls` from `x0`.
    pub fn rollout(params: &ArmParams, x0: JointState, controls: Vec<Control>, dt: f64) -> Result<Self> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0);
        for u in &controls {
            let x = arm::step_euler(params, states.last().unwrap(), u, dt)?;
            states.push(x);
        }
        Trajectory::new(states, controls, dt)
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.controls.len() as f64
    }

    pub fn n_samples(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> &JointState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &JointState {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// `N_Φ x N_w` nonnegative feature integrals, indexed `(feature, window)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct FeatureMatrix {
    columns: Vec<[f64; N_FEATURES]>,
}

impl FeatureMatrix {
    pub fn zeros(n_windows: usize) -> Self {
        FeatureMatrix {
            columns: vec![[0.0; N_FEATURES]; n_windows],
        }
    }

    pub fn from_columns(columns: Vec<[f64; N_FEATURES]>) -> Self {
        FeatureMatrix { columns }
    }

    pub fn n_windows(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, feature: usize, window: usize) -> f64 {
        self.columns[window][feature]
    }

    pub fn column(&self, window: usize) -> &[f64; N_FEATURES] {
        &self.columns[window]
    }

    pub fn columns(&self) -> &[[f64; N_FEATURES]] {
        &self.columns
    }

    /// Window-major flattening: entry `window * N_Φ + feature`.
    pub fn flat(&self) -> Vec<f64> {
        self.columns.iter().flatten().copied().collect()
    }

    /// Sum over windows of each feature row.
    pub fn row_totals(&self) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for c in &self.columns {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }
}

impl From<FeatureMatrix> for Vec<Vec<f64>> {
    fn from(m: FeatureMatrix) -> Self {
        rows_of(&m.columns)
    }
}

impl TryFrom<Vec<Vec<f64>>> for FeatureMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        Ok(FeatureMatrix {
            columns: columns_of(&rows)?,
        })
    }
}

pub(crate) fn rows_of(columns: &[[f64; N_FEATURES]]) -> Vec<Vec<f64>> {
    (0..N_FEATURES)
        .map(|j| columns.iter().map(|c| c[j]).collect())
        .collect()
}

pub(crate) fn columns_of(rows: &[Vec<f64>]) -> Result<Vec<[f64; N_FEATURES]>, String> {
    if rows.len() != N_FEATURES {
        return Err(format!("expected {N_FEATURES} rows, got {}", rows.len()));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err("ragged matrix rows".into());
    }
    Ok((0..n)
        .map(|s| std::array::from_fn(|j| rows[j][s]))
        .collect())
}

/// Per-knot quantities of the stage model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StageTerms<T> {
    /// Euler successor state.
    pub next: [T; 4],
    /// Stage integrands; the torque-change slot is left at zero.
    pub phi: [T; N_FEATURES],
}

/// Stage integrands and Euler update, generic over the scalar so the
/// optimizer can differentiate them.
#[inline]
pub(crate) fn stage_terms<T: Real>(p: &ArmParams, x: [T; 4], u: [T; 2], dt: f64) -> Option<StageTerms<T>> {
    let q = [x[0], x[1]];
    let dq = [x[2], x[3]];
    let ddq = arm::forward_dynamics_g(p, q, dq, u)?;
    let jac = arm::jacobian_g(p, q);
    let m = arm::mass_matrix_g(p, q[1]);

    let pv0 = jac[0][0] * dq[0] + jac[0][1] * dq[1];
    let pv1 = jac[1][0] * dq[0] + jac[1][1] * dq[1];
    let power = dq[0] * u[0] + dq[1] * u[1];
    let mdq0 = m[0][0] * dq[0] + m[0][1] * dq[1];
    let mdq1 = m[1][0] * dq[0] + m[1][1] * dq[1];

    let phi = [
        pv0 * pv0 + pv1 * pv1,
        (power * power + SMOOTH_ABS_EPS * SMOOTH_ABS_EPS).sqrt(),
        dq[0] * mdq0 + dq[1] * mdq1,
        ddq[0] * ddq[0] + ddq[1] * ddq[1],
        T::cst(0.0),
        dq[0] * dq[0] + dq[1] * dq[1],
        u[0] * u[0] + u[1] * u[1],
    ];
    let next = [
        q[0] + dq[0] * dt,
        q[1] + dq[1] * dt,
        dq[0] + ddq[0] * dt,
        dq[1] + ddq[1] * dt,
    ];
    Some(StageTerms { next, phi })
}

/// Number of stage inputs: four state entries followed by two controls.
pub(crate) const STAGE_DIM: usize = 6;

pub(crate) type StageGrad = [f64; STAGE_DIM];
pub(crate) type StageHess = [[f64; STAGE_DIM]; STAGE_DIM];

/// Stage values with exact first derivatives w.r.t. `z = [x, u]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StageEval {
    pub next: [f64; 4],
    pub phi: [f64; N_FEATURES],
    pub d_next: [StageGrad; 4],
    pub d_phi: [StageGrad; N_FEATURES],
}

impl StageEval {
    pub fn at(p: &ArmParams, x: [f64; 4], u: [f64; 2], dt: f64) -> Option<Self> {
        type D = Dual<STAGE_DIM>;
        let xd: [D; 4] = std::array::from_fn(|k| D::variable(x[k], k));
        let ud: [D; 2] = std::array::from_fn(|k| D::variable(u[k], 4 + k));
        let st = stage_terms(p, xd, ud, dt)?;
        Some(StageEval {
            next: st.next.map(|v| v.re),
            phi: st.phi.map(|v| v.re),
            d_next: st.next.map(|v| v.eps),
            d_phi: st.phi.map(|v| v.eps),
        })
    }
}

/// Stage values with first and second derivatives w.r.t. `z = [x, u]`.
#[derive(Debug, Clone)]
pub(crate) struct StageEval2 {
    pub first: StageEval,
    pub dd_next: [StageHess; 4],
    pub dd_phi: [StageHess; N_FEATURES],
}

impl StageEval2 {
    pub fn at(p: &ArmParams, x: [f64; 4], u: [f64; 2], dt: f64) -> Option<Self> {
        type H = HyperDual<STAGE_DIM>;
        let xd: [H; 4] = std::array::from_fn(|k| H::variable(x[k], k));
        let ud: [H; 2] = std::array::from_fn(|k| H::variable(u[k], 4 + k));
        let st = stage_terms(p, xd, ud, dt)?;
        Some(StageEval2 {
            first: StageEval {
                next: st.next.map(|v| v.re),
                phi: st.phi.map(|v| v.re),
                d_next: st.next.map(|v| v.grad),
                d_phi: st.phi.map(|v| v.grad),
            },
            dd_next: st.next.map(|v| v.hess),
            dd_phi: st.phi.map(|v| v.hess),
        })
    }
}

#[inline]
pub(crate) fn state_array(x: &JointState) -> [f64; 4] {
    x.to_array()
}

#[inline]
pub(crate) fn control_array(u: &Control) -> [f64; 2] {
    [u[0], u[1]]
}

/// Forward-difference torque rate at knot `t`; the last knot repeats the
/// previous difference.
#[inline]
pub(crate) fn torque_rate(controls: &[Control], t: usize, dt: f64) -> Vector2<f64> {
    let n = controls.len();
    if n < 2 {
        return Vector2::zeros();
    }
    let k = t.min(n - 2);
    (controls[k + 1] - controls[k]) / dt
}

/// Feature integrals of `traj` per window of `layout`.
pub fn compute_features(traj: &Trajectory, layout: &SectionLayout, params: &ArmParams) -> Result<FeatureMatrix> {
    layout.check(traj)?;
    traj.validate()?;
    let dt = traj.dt;
    let mut out = FeatureMatrix::zeros(layout.n_windows);
    for (t, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        let phi = stage_terms(params, state_array(x), control_array(u), dt).map(|st| st.phi).ok_or_else(|| {
            Error::SingularMassMatrix {
                det: arm::mass_matrix(params, &x.q).determinant(),
            }
        })?;
        let rate = torque_rate(&traj.controls, t, dt);
        let col = &mut out.columns[layout.window_of(t)];
        for j in 0..N_FEATURES {
            col[j] += phi[j] * dt;
        }
        col[Feature::TorqueChange.index()] += rate.norm_squared() * dt;
    }
    Ok(out)
}

/// Directional derivative of every feature integral along the control
/// perturbation `direction`, with the states following the Euler rollout
/// from the (fixed) initial state.
///
/// Returned per window in the same layout as [`compute_features`]; entries
/// may be negative.
pub fn feature_gradient(
    traj: &Trajectory,
    layout: &SectionLayout,
    params: &ArmParams,
    direction: &[Control],
) -> Result<Vec<[f64; N_FEATURES]>> {
    layout.check(traj)?;
    if direction.len() != traj.controls.len() {
        return Err(Error::ShapeMismatch(format!(
            "perturbation has {} knots, trajectory {}",
            direction.len(),
            traj.controls.len()
        )));
    }
    let dt = traj.dt;
    let mut out = vec![[0.0; N_FEATURES]; layout.n_windows];
    let mut dx = [0.0; 4];
    for (t, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        let stage = StageEval::at(params, state_array(x), control_array(u), dt).ok_or_else(|| {
            Error::SingularMassMatrix {
                det: arm::mass_matrix(params, &x.q).determinant(),
            }
        })?;
        let dz = [dx[0], dx[1], dx[2], dx[3], direction[t][0], direction[t][1]];
        let col = &mut out[layout.window_of(t)];
        for j in 0..N_FEATURES {
            let d: f64 = stage.d_phi[j].iter().zip(&dz).map(|(a, b)| a * b).sum();
            col[j] += d * dt;
        }
        let rate = torque_rate(&traj.controls, t, dt);
        let drate = torque_rate(direction, t, dt);
        col[Feature::TorqueChange.index()] += 2.0 * rate.dot(&drate) * dt;

        dx = std::array::from_fn(|i| stage.d_next[i].iter().zip(&dz).map(|(a, b)| a * b).sum());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_controls(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Control> {
        (0..n)
            .map(|_| Vector2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
            .collect()
    }

    fn random_traj(seed: u64, n: usize) -> (ArmParams, Trajectory) {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = JointState::new(Vector2::new(0.6, 1.2), Vector2::new(0.3, -0.2));
        let g = arm::gravity_torque(&p, &x0.q);
        let controls = random_controls(&mut rng, n, 2.0).into_iter().map(|u| u + g).collect();
        (p, Trajectory::rollout(&p, x0, controls, 0.01).unwrap())
    }

    #[test]
    fn resting_trajectory_has_zero_features() {
        let p = ArmParams::default().with_gravity(0.0);
        let x0 = JointState::at_rest(Vector2::new(0.4, 0.9));
        let traj = Trajectory::rollout(&p, x0, vec![Vector2::zeros(); 20], 0.01).unwrap();
        let layout = SectionLayout::new(2, 10).unwrap();
        let f = compute_features(&traj, &layout, &p).unwrap();
        for s in 0..2 {
            for j in 0..N_FEATURES {
                let v = f.get(j, s);
                if j == Feature::Energy.index() {
                    assert!((v - SMOOTH_ABS_EPS * 10.0 * 0.01).abs() < 1e-18);
                } else {
                    assert_eq!(v, 0.0, "feature {j}");
                }
            }
        }
    }

    #[test]
    fn constant_velocity_joint_velocity_feature() {
        let p = ArmParams::default().with_gravity(0.0);
        // States written directly; only the velocity channel matters here.
        let n_s = 25;
        let dt = 0.01;
        let states: Vec<_> = (0..=2 * n_s)
            .map(|k| JointState::new(Vector2::new(k as f64 * dt, 0.5), Vector2::new(1.0, 0.0)))
            .collect();
        let controls = vec![Vector2::zeros(); 2 * n_s];
        let traj = Trajectory::new(states, controls, dt).unwrap();
        let f = compute_features(&traj, &SectionLayout::new(2, n_s).unwrap(), &p).unwrap();
        for s in 0..2 {
            assert!((f.get(Feature::JointVelocity.index(), s) - n_s as f64 * dt).abs() < 1e-12);
        }
    }

    #[test]
    fn windows_partition_the_single_window_integral() {
        let (p, traj) = random_traj(3, 48);
        let one = compute_features(&traj, &SectionLayout::new(1, 48).unwrap(), &p).unwrap();
        for n_w in [2, 3, 6, 8] {
            let many = compute_features(&traj, &SectionLayout::new(n_w, 48 / n_w).unwrap(), &p).unwrap();
            let totals = many.row_totals();
            for j in 0..N_FEATURES {
                assert!((totals[j] - one.get(j, 0)).abs() <= 1e-12 * one.get(j, 0).max(1.0));
            }
        }
    }

    #[test]
    fn layout_mismatch_is_contract_violation() {
        let (p, traj) = random_traj(1, 20);
        let r = compute_features(&traj, &SectionLayout::new(3, 5).unwrap(), &p);
        assert!(matches!(r, Err(Error::Contract(_))));
        assert!(SectionLayout::new(2, 1).is_err());
        assert!(SectionLayout::new(0, 4).is_err());
    }

    #[test]
    fn zero_perturbation_has_zero_derivative() {
        let (p, traj) = random_traj(5, 20);
        let layout = SectionLayout::new(2, 10).unwrap();
        let d = feature_gradient(&traj, &layout, &p, &vec![Vector2::zeros(); 20]).unwrap();
        assert!(d.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn torque_feature_derivative_is_quadratic_form() {
        let (p, traj) = random_traj(9, 30);
        let layout = SectionLayout::new(1, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let du = random_controls(&mut rng, 30, 1.0);
        let d = feature_gradient(&traj, &layout, &p, &du).unwrap();
        let expected: f64 = traj.controls.iter().zip(&du).map(|(u, v)| 2.0 * u.dot(v) * traj.dt).sum();
        assert!((d[0][Feature::JointTorque.index()] - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn feature_derivatives_match_central_differences() {
        let (p, traj) = random_traj(21, 40);
        let layout = SectionLayout::new(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let du = random_controls(&mut rng, 40, 1.0);
        let d = feature_gradient(&traj, &layout, &p, &du).unwrap();

        let eval = |h: f64| {
            let controls = traj.controls.iter().zip(&du).map(|(u, v)| u + v * h).collect();
            let t = Trajectory::rollout(&p, traj.states[0], controls, traj.dt).unwrap();
            compute_features(&t, &layout, &p).unwrap()
        };
        let h = 1e-5;
        let (fp, fm) = (eval(h), eval(-h));
        for s in 0..4 {
            for j in 0..N_FEATURES {
                let fd = (fp.get(j, s) - fm.get(j, s)) / (2.0 * h);
                let scale = fd.abs().max(d[s][j].abs()).max(1e-6);
                assert!(
                    (fd - d[s][j]).abs() / scale < 1e-5,
                    "feature {j} window {s}: fd {fd} analytic {}",
                    d[s][j]
                );
            }
        }
    }

    #[test]
    fn smooth_abs_error_is_bounded() {
        for z in [-1e3, -1.0, -1e-7, 0.0, 1e-9, 0.3, 42.0] {
            assert!((smooth_abs(z) - f64::abs(z)).abs() <= SMOOTH_ABS_EPS);
        }
    }

    #[test]
    fn serde_uses_feature_rows() {
        let m = FeatureMatrix::from_columns(vec![[1.0; N_FEATURES], [2.0; N_FEATURES]]);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v.as_array().unwrap().len(), N_FEATURES);
        assert_eq!(v[0], serde_json::json!([1.0, 2.0]));
        let back: FeatureMatrix = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
