//! Planar two-link arm: kinematics and rigid-body dynamics.
//!
//! Angle convention: `q1` is the shoulder angle measured from the horizontal
//! axis pointing toward the target, `q2` the relative elbow flexion, so
//! `q = (0, 0)` is the arm fully extended toward the target. Gravity acts
//! along the negative vertical axis of the movement plane.
//!
//! The Coriolis matrix uses the Christoffel-symbol form, which makes
//! `Ṁ - 2C` skew-symmetric.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{Error, Result};

pub type Control = Vector2<f64>;

/// Segment lengths, masses and inertias of the planar arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    /// Upper arm length (m).
    pub l1: f64,
    /// Forearm length (m).
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    /// Shoulder to upper-arm center of mass (m).
    pub lc1: f64,
    /// Elbow to forearm center of mass (m).
    pub lc2: f64,
    /// Moments of inertia about the segment centers of mass (kg·m²).
    pub i1: f64,
    pub i2: f64,
    #[serde(default = "default_gravity")]
    pub g: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams::uniform_rods(0.3, 0.25, 2.0, 1.5)
    }
}

impl ArmParams {
    /// Segments modelled as uniform rods: centers of mass at mid-length and
    /// `I = m L² / 12`.
    pub fn uniform_rods(l1: f64, l2: f64, m1: f64, m2: f64) -> Self {
        ArmParams {
            l1,
            l2,
            m1,
            m2,
            lc1: l1 / 2.0,
            lc2: l2 / 2.0,
            i1: m1 * l1 * l1 / 12.0,
            i2: m2 * l2 * l2 / 12.0,
            g: default_gravity(),
        }
    }

    pub fn with_gravity(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    /// Full arm reach `L1 + L2`.
    pub fn reach(&self) -> f64 {
        self.l1 + self.l2
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l1, self.l2, self.m1, self.m2, self.lc1, self.lc2, self.i1, self.i2, self.g,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite entry".into()));
        }
        if self.l1 <= 0.0 || self.l2 <= 0.0 {
            return Err(Error::InvalidParams("segment lengths must be positive".into()));
        }
        if self.m1 <= 0.0 || self.m2 <= 0.0 {
            return Err(Error::InvalidParams("segment masses must be positive".into()));
        }
        if self.i1 < 0.0 || self.i2 < 0.0 {
            return Err(Error::InvalidParams("inertias must be nonnegative".into()));
        }
        if !(0.0..=self.l1).contains(&self.lc1) || !(0.0..=self.l2).contains(&self.lc2) {
            return Err(Error::InvalidParams(
                "center of mass must lie on its segment".into(),
            ));
        }
        Ok(())
    }
}

/// Joint angles and velocities `x = [q1, q2, q̇1, q̇2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vector2<f64>,
    pub dq: Vector2<f64>,
}

impl JointState {
    pub fn new(q: Vector2<f64>, dq: Vector2<f64>) -> Self {
        JointState { q, dq }
    }

    pub fn at_rest(q: Vector2<f64>) -> Self {
        JointState {
            q,
            dq: Vector2::zeros(),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q[0], self.q[1], self.dq[0], self.dq[1]]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        JointState {
            q: Vector2::new(x[0], x[1]),
            dq: Vector2::new(x[2], x[3]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

// Generic building blocks, shared by the f64 API and the dual-number
// Jacobian evaluation in the optimizer.

#[inline]
pub(crate) fn hand_position_g<T: Real>(p: &ArmParams, q: [T; 2]) -> [T; 2] {
    let q12 = q[0] + q[1];
    [
        q[0].cos() * p.l1 + q12.cos() * p.l2,
        q[0].sin() * p.l1 + q12.sin() * p.l2,
    ]
}

#[inline]
pub(crate) fn jacobian_g<T: Real>(p: &ArmParams, q: [T; 2]) -> [[T; 2]; 2] {
    let q12 = q[0] + q[1];
    let (s1, c1) = (q[0].sin(), q[0].cos());
    let (s12, c12) = (q12.sin(), q12.cos());
    [
        [-(s1 * p.l1) - s12 * p.l2, -(s12 * p.l2)],
        [c1 * p.l1 + c12 * p.l2, c12 * p.l2],
    ]
}

#[inline]
pub(crate) fn mass_matrix_g<T: Real>(p: &ArmParams, q2: T) -> [[T; 2]; 2] {
    let c2 = q2.cos();
    let k = p.m2 * p.l1 * p.lc2;
    let m11 = c2 * (2.0 * k)
        + (p.i1 + p.i2 + p.m1 * p.lc1 * p.lc1 + p.m2 * (p.l1 * p.l1 + p.lc2 * p.lc2));
    let m12 = c2 * k + (p.i2 + p.m2 * p.lc2 * p.lc2);
    let m22 = T::cst(p.i2 + p.m2 * p.lc2 * p.lc2);
    [[m11, m12], [m12, m22]]
}

#[inline]
pub(crate) fn coriolis_g<T: Real>(p: &ArmParams, q2: T, dq: [T; 2]) -> [[T; 2]; 2] {
    let h = q2.sin() * (p.m2 * p.l1 * p.lc2);
    [
        [-(h * dq[1]), -(h * (dq[0] + dq[1]))],
        [h * dq[0], T::cst(0.0)],
    ]
}

#[inline]
pub(crate) fn gravity_g<T: Real>(p: &ArmParams, q: [T; 2]) -> [T; 2] {
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let a = p.g * (p.m1 * p.lc1 + p.m2 * p.l1);
    let b = p.g * p.m2 * p.lc2;
    [c1 * a + c12 * b, c12 * b]
}

/// `C(q, q̇) q̇ + G(q)`.
#[inline]
pub(crate) fn bias_g<T: Real>(p: &ArmParams, q: [T; 2], dq: [T; 2]) -> [T; 2] {
    let c = coriolis_g(p, q[1], dq);
    let g = gravity_g(p, q);
    [
        c[0][0] * dq[0] + c[0][1] * dq[1] + g[0],
        c[1][0] * dq[0] + c[1][1] * dq[1] + g[1],
    ]
}

pub(crate) const MIN_MASS_DET: f64 = 1e-14;

/// `M⁻¹(u - C q̇ - G)`; `None` when the mass matrix is numerically singular.
#[inline]
pub(crate) fn forward_dynamics_g<T: Real>(
    p: &ArmParams,
    q: [T; 2],
    dq: [T; 2],
    u: [T; 2],
) -> Option<[T; 2]> {
    let m = mass_matrix_g(p, q[1]);
    let b = bias_g(p, q, dq);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.value().abs() > MIN_MASS_DET) {
        return None;
    }
    let r0 = u[0] - b[0];
    let r1 = u[1] - b[1];
    Some([
        (m[1][1] * r0 - m[0][1] * r1) / det,
        (m[0][0] * r1 - m[1][0] * r0) / det,
    ])
}

fn arr(v: &Vector2<f64>) -> [f64; 2] {
    [v[0], v[1]]
}

fn mat(m: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

/// Hand position in the movement plane.
pub fn forward_kinematics(params: &ArmParams, q: &Vector2<f64>) -> Vector2<f64> {
    Vector2::from(hand_position_g(params, arr(q)))
}

/// `∂P/∂q`, so that `Ṗ = J(q) q̇`.
pub fn hand_jacobian(params: &ArmParams, q: &Vector2<f64>) -> Matrix2<f64> {
    mat(jacobian_g(params, arr(q)))
}

pub fn mass_matrix(params: &ArmParams, q: &Vector2<f64>) -> Matrix2<f64> {
    mat(mass_matrix_g(params, q[1]))
}

/// Coriolis/centrifugal matrix in Christoffel form.
pub fn coriolis_matrix(params: &ArmParams, q: &Vector2<f64>, dq: &Vector2<f64>) -> Matrix2<f64> {
    mat(coriolis_g(params, q[1], arr(dq)))
}

pub fn gravity_torque(params: &ArmParams, q: &Vector2<f64>) -> Vector2<f64> {
    Vector2::from(gravity_g(params, arr(q)))
}

/// Joint accelerations produced by torques `u` in state `x`.
pub fn forward_dynamics(params: &ArmParams, x: &JointState, u: &Control) -> Result<Vector2<f64>> {
    forward_dynamics_g(params, arr(&x.q), arr(&x.dq), arr(u))
        .map(Vector2::from)
        .ok_or_else(|| Error::SingularMassMatrix {
            det: mass_matrix(params, &x.q).determinant(),
        })
}

/// Torques `M q̈ + C q̇ + G` needed to realise `ddq`.
pub fn inverse_dynamics(
    params: &ArmParams,
    q: &Vector2<f64>,
    dq: &Vector2<f64>,
    ddq: &Vector2<f64>,
) -> Vector2<f64> {
    let b = Vector2::from(bias_g(params, arr(q), arr(dq)));
    mass_matrix(params, q) * ddq + b
}

/// Explicit Euler step: `q⁺ = q + dt q̇`, `q̇⁺ = q̇ + dt q̈(x, u)`.
pub fn step_euler(params: &ArmParams, x: &JointState, u: &Control, dt: f64) -> Result<JointState> {
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("timestep must be positive, got {dt}")));
    }
    let ddq = forward_dynamics(params, x, u)?;
    Ok(JointState {
        q: x.q + x.dq * dt,
        dq: x.dq + ddq * dt,
    })
}

/// Kinetic plus gravitational potential energy.
pub fn mechanical_energy(params: &ArmParams, x: &JointState) -> f64 {
    let kinetic = 0.5 * x.dq.dot(&(mass_matrix(params, &x.q) * x.dq));
    let p = params;
    let potential = p.g
        * (p.m1 * p.lc1 * x.q[0].sin()
            + p.m2 * (p.l1 * x.q[0].sin() + p.lc2 * (x.q[0] + x.q[1]).sin()));
    kinetic + potential
}
