//! Direct optimal control of a reaching movement for a given weight matrix.
//!
//! Single shooting over the `N` control vectors: states are always the Euler
//! rollout of the controls from `(q0, 0)`, so the dynamics hold exactly.
//! Terminal equalities (hand x-coordinate and zero final velocity) and the
//! joint/velocity bounds are enforced by an augmented Lagrangian. Inner
//! problems are solved by second-order differential dynamic programming;
//! stationarity is measured by the adjoint gradient w.r.t. the controls.

mod ddp;
mod weights;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::arm::{self, ArmParams, Control, JointState};
use crate::error::{Error, Result};
use crate::dual::HyperDual;
use crate::features::{
    compute_features, stage_terms, FeatureMatrix, SectionLayout, StageEval2, Trajectory, N_FEATURES,
    STAGE_DIM,
};

use ddp::{InnerSettings, InnerStatus};
pub use weights::WeightMatrix;

/// Maximum terminal residual accepted on a converged solve (m for the hand,
/// rad/s for velocities).
pub const TERMINAL_TOLERANCE: f64 = 1e-3;
/// Maximum joint-range or joint-speed violation accepted on a converged solve.
pub const BOUND_TOLERANCE: f64 = 1e-6;

const TORQUE_CHANGE: usize = 4;
const INEQ_PER_KNOT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TerminalMode {
    /// `P_X(T) = target_x` and `q̇(T) = 0`.
    HandX,
    /// `q(T) = q_final` and `q̇(T) = 0`.
    FullJoint { q_final: Vector2<f64> },
}

/// Everything that defines a reaching problem except the cost weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTask {
    pub params: ArmParams,
    pub q0: Vector2<f64>,
    pub target_x: f64,
    pub q_lo: Vector2<f64>,
    pub q_hi: Vector2<f64>,
    pub dq_max: f64,
    /// Horizon `T` (s).
    pub horizon: f64,
    pub layout: SectionLayout,
    pub terminal: TerminalMode,
}

/// Default joint range, both joints (rad).
pub fn default_joint_bounds() -> (Vector2<f64>, Vector2<f64>) {
    let lo = (-10.0f64).to_radians();
    let hi = 170.0f64.to_radians();
    (Vector2::new(lo, lo), Vector2::new(hi, hi))
}

pub const DEFAULT_DQ_MAX: f64 = 20.0;

impl ReachTask {
    /// Hand-x task with the default joint range and speed limit.
    pub fn new(params: ArmParams, q0: Vector2<f64>, target_x: f64, horizon: f64, layout: SectionLayout) -> Self {
        let (q_lo, q_hi) = default_joint_bounds();
        ReachTask {
            params,
            q0,
            target_x,
            q_lo,
            q_hi,
            dq_max: DEFAULT_DQ_MAX,
            horizon,
            layout,
            terminal: TerminalMode::HandX,
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.layout.n_controls() as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.layout.validate()?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Contract(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dq_max > 0.0) {
            return Err(Error::Contract("dq_max must be positive".into()));
        }
        for k in 0..2 {
            if !(self.q_lo[k] < self.q_hi[k]) {
                return Err(Error::Contract(format!("joint {k}: q_lo must be below q_hi")));
            }
            if !(self.q_lo[k] <= self.q0[k] && self.q0[k] <= self.q_hi[k]) {
                return Err(Error::Contract(format!("joint {k}: q0 outside the joint range")));
            }
        }
        if let TerminalMode::HandX = self.terminal {
            let reach = self.params.reach();
            if !(self.target_x.abs() <= reach) {
                return Err(Error::InfeasibleTarget {
                    target_x: self.target_x,
                    reach,
                });
            }
        }
        Ok(())
    }

    pub fn with_weights(&self, weights: WeightMatrix) -> DocProblem {
        DocProblem {
            task: self.clone(),
            weights,
        }
    }

    /// Torques holding `q0` against gravity at every knot.
    pub fn gravity_hold(&self) -> Vec<Control> {
        vec![arm::gravity_torque(&self.params, &self.q0); self.layout.n_controls()]
    }

    fn n_equalities(&self) -> usize {
        match self.terminal {
            TerminalMode::HandX => 3,
            TerminalMode::FullJoint { .. } => 4,
        }
    }

    /// Terminal equality residuals with their state gradients and Hessians.
    fn terminal_residuals(&self, x: &[f64; 4]) -> Vec<TerminalTerm> {
        let mut out = Vec::with_capacity(4);
        let linear = |value: f64, k: usize| {
            let mut grad = [0.0; 4];
            grad[k] = 1.0;
            TerminalTerm {
                value,
                grad,
                hess: [[0.0; 4]; 4],
            }
        };
        match self.terminal {
            TerminalMode::HandX => {
                type H = HyperDual<2>;
                let px = arm::hand_position_g(&self.params, [H::variable(x[0], 0), H::variable(x[1], 1)])[0];
                let mut term = TerminalTerm {
                    value: px.re - self.target_x,
                    grad: [px.grad[0], px.grad[1], 0.0, 0.0],
                    hess: [[0.0; 4]; 4],
                };
                for a in 0..2 {
                    for b in 0..2 {
                        term.hess[a][b] = px.hess[a][b];
                    }
                }
                out.push(term);
            }
            TerminalMode::FullJoint { q_final } => {
                out.push(linear(x[0] - q_final[0], 0));
                out.push(linear(x[1] - q_final[1], 1));
            }
        }
        out.push(linear(x[2], 2));
        out.push(linear(x[3], 3));
        out
    }

    /// Bound constraints `c ≤ 0` at one knot, in a fixed order.
    fn bound_residuals(&self, x: &[f64; 4]) -> [f64; INEQ_PER_KNOT] {
        [
            self.q_lo[0] - x[0],
            self.q_lo[1] - x[1],
            x[0] - self.q_hi[0],
            x[1] - self.q_hi[1],
            x[2] - self.dq_max,
            x[3] - self.dq_max,
            -x[2] - self.dq_max,
            -x[3] - self.dq_max,
        ]
    }
}

struct TerminalTerm {
    value: f64,
    grad: [f64; 4],
    hess: [[f64; 4]; 4],
}

/// `∂c_i/∂x` for [`ReachTask::bound_residuals`]: one state index with a sign.
const BOUND_JACOBIAN: [(usize, f64); INEQ_PER_KNOT] = [
    (0, -1.0),
    (1, -1.0),
    (0, 1.0),
    (1, 1.0),
    (2, 1.0),
    (3, 1.0),
    (2, -1.0),
    (3, -1.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocProblem {
    pub task: ReachTask,
    pub weights: WeightMatrix,
}

impl DocProblem {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.weights.validate()?;
        if self.weights.n_windows() != self.task.layout.n_windows {
            return Err(Error::ShapeMismatch(format!(
                "{} weight windows for a {}-window layout",
                self.weights.n_windows(),
                self.task.layout.n_windows
            )));
        }
        if !(self.weights.max_entry() > 0.0) {
            return Err(Error::Contract("at least one weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DocConfig {
    /// Stationarity tolerance on the inner gradient (objective normalized by
    /// the weight sum).
    pub gtol: f64,
    /// Inner tolerance used for the first outer iteration of a cold start.
    pub initial_inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Terminal residual targeted by the solver.
    pub terminal_tol: f64,
    /// Bound violation targeted by the solver.
    pub bound_tol: f64,
    /// Keep the inner objective sequence of every outer iteration.
    pub record_trace: bool,
}

impl Default for DocConfig {
    fn default() -> Self {
        DocConfig {
            gtol: 1e-6,
            initial_inner_tol: 1e-2,
            max_outer: 20,
            max_inner: 500,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e10,
            terminal_tol: 1e-5,
            bound_tol: 1e-7,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocSolution {
    pub trajectory: Trajectory,
    pub features: FeatureMatrix,
    pub converged: bool,
    /// Outer (multiplier-update) iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    /// Largest terminal residual or bound violation.
    pub constraint_violation: f64,
    /// `|P_X(T) - target|` (hand mode) or `‖q(T) - q_final‖∞` (joint mode).
    pub terminal_error: f64,
    pub terminal_speed: f64,
    pub bound_violation: f64,
    /// Inner gradient norm at the last outer iteration.
    pub stationarity: f64,
    /// `Σ_s Σ_j ω_{j,s} Φ_{j,s}`.
    pub objective: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub inner_traces: Vec<Vec<f64>>,
}

impl DocSolution {
    /// Whether the reported residuals satisfy the public tolerances.
    pub fn within_tolerances(&self) -> bool {
        self.terminal_error <= TERMINAL_TOLERANCE
            && self.terminal_speed <= TERMINAL_TOLERANCE
            && self.bound_violation <= BOUND_TOLERANCE
    }
}

/// Weighted feature sum of a trajectory.
pub fn doc_objective(
    traj: &Trajectory,
    weights: &WeightMatrix,
    layout: &SectionLayout,
    params: &ArmParams,
) -> Result<f64> {
    let f = compute_features(traj, layout, params)?;
    weights.dot(&f)
}

/// Augmented Lagrangian of one outer iteration as a function of the flat
/// control vector.
struct AugmentedLagrangian<'a> {
    task: &'a ReachTask,
    /// Per-knot weight column, pre-multiplied by `dt / Σω`.
    knot_weights: Vec<[f64; N_FEATURES]>,
    dt: f64,
    x0: [f64; 4],
    eq_mult: Vec<f64>,
    ineq_mult: Vec<f64>,
    rho: f64,
    states: Vec<[f64; 4]>,
    stages: Vec<StageEval2>,
}

impl<'a> AugmentedLagrangian<'a> {
    fn new(problem: &'a DocProblem) -> Self {
        let task = &problem.task;
        let n = task.layout.n_controls();
        let dt = task.dt();
        let scale = dt / problem.weights.total();
        let knot_weights = (0..n)
            .map(|t| problem.weights.column(task.layout.window_of(t)).map(|w| w * scale))
            .collect();
        AugmentedLagrangian {
            task,
            knot_weights,
            dt,
            x0: JointState::at_rest(task.q0).to_array(),
            eq_mult: vec![0.0; task.n_equalities()],
            ineq_mult: vec![0.0; n * INEQ_PER_KNOT],
            rho: 1.0,
            states: vec![[0.0; 4]; n + 1],
            stages: Vec::with_capacity(n),
        }
    }

    fn n(&self) -> usize {
        self.knot_weights.len()
    }

    #[inline]
    fn control(u: &[f64], t: usize) -> [f64; 2] {
        [u[2 * t], u[2 * t + 1]]
    }

    #[inline]
    fn torque_rate(u: &[f64], t: usize, n: usize, dt: f64) -> (usize, [f64; 2]) {
        let k = t.min(n - 2);
        (k, [(u[2 * k + 2] - u[2 * k]) / dt, (u[2 * k + 3] - u[2 * k + 1]) / dt])
    }

    /// Normalized weighted objective given the rollout stored in `states`.
    fn cost_terms(&self, phis: impl Iterator<Item = [f64; N_FEATURES]>, u: &[f64]) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for (t, phi) in phis.enumerate() {
            let w = &self.knot_weights[t];
            let (_, r) = Self::torque_rate(u, t, n, self.dt);
            total += w.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>()
                + w[TORQUE_CHANGE] * (r[0] * r[0] + r[1] * r[1]);
        }
        total
    }

    fn penalty_terms(&self) -> f64 {
        let rho = self.rho;
        let mut total = 0.0;
        for (term, lam) in self
            .task
            .terminal_residuals(self.states.last().unwrap())
            .iter()
            .zip(&self.eq_mult)
        {
            let h = term.value;
            total += lam * h + 0.5 * rho * h * h;
        }
        for (t, x) in self.states.iter().enumerate().skip(1) {
            let c = self.task.bound_residuals(x);
            let mu = &self.ineq_mult[(t - 1) * INEQ_PER_KNOT..t * INEQ_PER_KNOT];
            for (ci, mi) in c.iter().zip(mu) {
                let a = (mi + rho * ci).max(0.0);
                total += (a * a - mi * mi) / (2.0 * rho);
            }
        }
        total
    }

    fn rollout_values(&mut self, u: &[f64]) -> Option<Vec<[f64; N_FEATURES]>> {
        let n = self.n();
        let mut phis = Vec::with_capacity(n);
        self.states[0] = self.x0;
        for t in 0..n {
            let st = stage_terms(&self.task.params, self.states[t], Self::control(u, t), self.dt)?;
            if !st.next.iter().all(|v| v.is_finite()) {
                return None;
            }
            self.states[t + 1] = st.next;
            phis.push(st.phi);
        }
        Some(phis)
    }

    fn rollout_stages(&mut self, u: &[f64]) -> Option<()> {
        let n = self.n();
        self.stages.clear();
        self.states[0] = self.x0;
        for t in 0..n {
            let st = StageEval2::at(&self.task.params, self.states[t], Self::control(u, t), self.dt)?;
            if !st.first.next.iter().all(|v| v.is_finite()) {
                return None;
            }
            self.states[t + 1] = st.first.next;
            self.stages.push(st);
        }
        Some(())
    }

    /// Reverse accumulation through the stored rollout. `terminal_seed` is
    /// the gradient w.r.t. `x_N` of the terminal terms.
    fn backward(&self, u: &[f64], terminal_seed: [f64; 4], with_cost: bool, with_bounds: bool, grad: &mut [f64]) {
        let n = self.n();
        let rho = self.rho;
        let mut adj = terminal_seed;
        let bound_grad = |t: usize, adj: &mut [f64; 4]| {
            let c = self.task.bound_residuals(&self.states[t]);
            let mu = &self.ineq_mult[(t - 1) * INEQ_PER_KNOT..t * INEQ_PER_KNOT];
            for i in 0..INEQ_PER_KNOT {
                let a = (mu[i] + rho * c[i]).max(0.0);
                if a > 0.0 {
                    let (k, s) = BOUND_JACOBIAN[i];
                    adj[k] += a * s;
                }
            }
        };
        if with_bounds {
            bound_grad(n, &mut adj);
        }
        for t in (0..n).rev() {
            let st = &self.stages[t].first;
            let mut dz = [0.0; STAGE_DIM];
            for (k, d) in dz.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..4 {
                    acc += adj[i] * st.d_next[i][k];
                }
                if with_cost {
                    let w = &self.knot_weights[t];
                    for j in 0..N_FEATURES {
                        acc += w[j] * st.d_phi[j][k];
                    }
                }
                *d = acc;
            }
            grad[2 * t] = dz[4];
            grad[2 * t + 1] = dz[5];
            adj = [dz[0], dz[1], dz[2], dz[3]];
            if with_bounds && t > 0 {
                bound_grad(t, &mut adj);
            }
        }
        if with_cost {
            for t in 0..n {
                let w5 = self.knot_weights[t][TORQUE_CHANGE];
                if w5 == 0.0 {
                    continue;
                }
                let (k, r) = Self::torque_rate(u, t, n, self.dt);
                let c = 2.0 * w5 / self.dt;
                for i in 0..2 {
                    grad[2 * k + 2 + i] += c * r[i];
                    grad[2 * k + i] -= c * r[i];
                }
            }
        }
    }

    fn terminal_seed(&self) -> [f64; 4] {
        let mut seed = [0.0; 4];
        for (term, lam) in self
            .task
            .terminal_residuals(self.states.last().unwrap())
            .iter()
            .zip(&self.eq_mult)
        {
            let a = lam + self.rho * term.value;
            for k in 0..4 {
                seed[k] += a * term.grad[k];
            }
        }
        seed
    }

    /// Least-squares equality multipliers `argmin_λ ‖∇f + Σ λ_k ∇h_k‖` at `u`.
    fn least_squares_multipliers(&mut self, u: &[f64]) -> Option<Vec<f64>> {
        self.rollout_stages(u)?;
        let m = u.len();
        let mut gf = vec![0.0; m];
        self.backward(u, [0.0; 4], true, false, &mut gf);
        let residuals = self.task.terminal_residuals(self.states.last().unwrap());
        let ne = residuals.len();
        let mut gh = DMatrix::zeros(ne, m);
        let mut row = vec![0.0; m];
        for (k, term) in residuals.iter().enumerate() {
            self.backward(u, term.grad, false, false, &mut row);
            for i in 0..m {
                gh[(k, i)] = row[i];
            }
        }
        let gram = &gh * gh.transpose();
        let rhs = -(&gh * DVector::from_vec(gf));
        let lam = gram.lu().solve(&rhs)?;
        lam.iter().all(|v| v.is_finite()).then(|| lam.iter().copied().collect())
    }

    fn residuals_at(&mut self, u: &[f64]) -> Option<Residuals> {
        self.rollout_values(u)?;
        let xn = *self.states.last().unwrap();
        let eq: Vec<f64> = self.task.terminal_residuals(&xn).iter().map(|t| t.value).collect();
        let ineq: Vec<f64> = self
            .states
            .iter()
            .skip(1)
            .flat_map(|x| self.task.bound_residuals(x))
            .collect();
        let n_pos = eq.len() - 2;
        Some(Residuals {
            terminal_error: eq[..n_pos].iter().fold(0.0, |a: f64, b| a.max(b.abs())),
            terminal_speed: eq[n_pos..].iter().fold(0.0, |a: f64, b| a.max(b.abs())),
            bound_violation: ineq.iter().fold(0.0, |a: f64, &b| a.max(b)),
            eq,
            ineq,
        })
    }
}

struct Residuals {
    eq: Vec<f64>,
    ineq: Vec<f64>,
    terminal_error: f64,
    terminal_speed: f64,
    bound_violation: f64,
}

impl AugmentedLagrangian<'_> {
    fn value(&mut self, u: &[f64]) -> Option<f64> {
        let phis = self.rollout_values(u)?;
        let v = self.cost_terms(phis.into_iter(), u) + self.penalty_terms();
        v.is_finite().then_some(v)
    }

    /// Value and control gradient; leaves the stage derivatives of `u` in
    /// place for the Riccati sweep.
    fn value_grad(&mut self, u: &[f64], grad: &mut [f64]) -> Option<f64> {
        self.rollout_stages(u)?;
        let phis: Vec<_> = self.stages.iter().map(|s| s.first.phi).collect();
        let v = self.cost_terms(phis.into_iter(), u) + self.penalty_terms();
        if !v.is_finite() {
            return None;
        }
        let seed = self.terminal_seed();
        self.backward(u, seed, true, true, grad);
        grad.iter().all(|g| g.is_finite()).then_some(v)
    }
}

fn flatten(controls: &[Control]) -> Vec<f64> {
    controls.iter().flat_map(|u| [u[0], u[1]]).collect()
}

fn unflatten(u: &[f64]) -> Vec<Control> {
    u.chunks_exact(2).map(|c| Vector2::new(c[0], c[1])).collect()
}

/// Solve the reaching problem for `problem.weights`.
///
/// A warm start supplies the initial controls (it must have the problem's
/// knot count); the equality multipliers are then initialized by least
/// squares at that point. Without a warm start the arm is initially held
/// motionless against gravity.
pub fn solve_doc(problem: &DocProblem, config: &DocConfig, warm_start: Option<&Trajectory>) -> Result<DocSolution> {
    problem.validate()?;
    let task = &problem.task;
    let n = task.layout.n_controls();
    let dt = task.dt();

    let mut u = match warm_start {
        Some(w) => {
            if w.controls.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "warm start has {} controls, problem needs {n}",
                    w.controls.len()
                )));
            }
            flatten(&w.controls)
        }
        None => flatten(&task.gravity_hold()),
    };

    let mut al = AugmentedLagrangian::new(problem);
    al.rho = config.penalty_init;
    let mut inner_tol = config.gtol.max(config.initial_inner_tol);
    if warm_start.is_some() {
        if let Some(lam) = al.least_squares_multipliers(&u) {
            al.eq_mult = lam;
        }
        inner_tol = config.gtol;
    }

    let settings = |tol: f64| InnerSettings {
        max_iterations: config.max_inner,
        gtol: tol,
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut inner_iterations = 0;
    let mut stationarity = f64::INFINITY;
    let mut traces = Vec::new();
    let mut prev_violation = f64::INFINITY;
    let mut last: Option<Residuals> = None;

    for _ in 0..config.max_outer {
        iterations += 1;
        let report = ddp::minimize(&mut al, &mut u, &settings(inner_tol));
        inner_iterations += report.iterations;
        stationarity = report.grad_inf;
        if config.record_trace {
            traces.push(report.trace.clone());
        }
        if report.status == InnerStatus::BadStart {
            return Err(Error::DocFailed("rollout diverged at the initial controls".into()));
        }
        let Some(res) = al.residuals_at(&u) else {
            return Err(Error::DocFailed("rollout diverged".into()));
        };
        let feasible = res.terminal_error <= config.terminal_tol
            && res.terminal_speed <= config.terminal_tol
            && res.bound_violation <= config.bound_tol;
        let stationary = report.status == InnerStatus::Converged && inner_tol <= config.gtol;
        if feasible && stationary {
            converged = true;
            last = Some(res);
            break;
        }

        for (lam, h) in al.eq_mult.iter_mut().zip(&res.eq) {
            *lam += al.rho * h;
        }
        for (mu, c) in al.ineq_mult.iter_mut().zip(&res.ineq) {
            *mu = (*mu + al.rho * c).max(0.0);
        }
        let violation = res
            .terminal_error
            .max(res.terminal_speed)
            .max(res.bound_violation);
        if !feasible && violation > 0.25 * prev_violation {
            al.rho = (al.rho * config.penalty_growth).min(config.penalty_max);
        }
        prev_violation = violation;
        inner_tol = if feasible {
            config.gtol
        } else {
            (inner_tol * 0.1).max(config.gtol)
        };
        last = Some(res);
    }

    let res = last.expect("at least one outer iteration");
    let controls = unflatten(&u);
    let trajectory = Trajectory::rollout(&task.params, JointState::at_rest(task.q0), controls, dt)?;
    let features = compute_features(&trajectory, &task.layout, &task.params)?;
    let objective = problem.weights.dot(&features)?;
    let solution = DocSolution {
        trajectory,
        features,
        converged,
        iterations,
        inner_iterations,
        constraint_violation: res.terminal_error.max(res.terminal_speed).max(res.bound_violation),
        terminal_error: res.terminal_error,
        terminal_speed: res.terminal_speed,
        bound_violation: res.bound_violation,
        stationarity,
        objective,
        inner_traces: traces,
    };
    log::debug!(
        "doc solve: converged={} outer={} inner={} viol={:.2e} stat={:.2e}",
        solution.converged,
        solution.iterations,
        solution.inner_iterations,
        solution.constraint_violation,
        solution.stationarity
    );
    Ok(solution)
}
