//! Differential dynamic programming for the inner augmented-Lagrangian
//! problems.
//!
//! The forward pass is closed-loop: the control update is fed back on the
//! deviation from the nominal rollout, which keeps line searches meaningful
//! when the open-loop arm dynamics are unstable. The shooting state is
//! `s = [x, u_prev]` so the torque-change term stays stage-wise.
//!
//! Steps whose predicted decrease is below the rounding level of the
//! objective are accepted when the objective rises by no more than that
//! level; the gradient then decides progress.

use nalgebra::{Cholesky, Matrix2, SMatrix, SVector, Vector2};

use super::{AugmentedLagrangian, BOUND_JACOBIAN, INEQ_PER_KNOT, TORQUE_CHANGE};
use crate::features::{stage_terms, N_FEATURES, STAGE_DIM};

type Vec6 = SVector<f64, 6>;
type Mat6 = SMatrix<f64, 6, 6>;
type Mat2x6 = SMatrix<f64, 2, 6>;
type Mat6x2 = SMatrix<f64, 6, 2>;

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerSettings {
    pub max_iterations: usize,
    pub gtol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InnerStatus {
    Converged,
    MaxIterations,
    /// No decrease found even with heavy regularization.
    Stalled,
    /// The starting controls already diverge.
    BadStart,
}

#[derive(Debug, Clone)]
pub(crate) struct InnerReport {
    pub status: InnerStatus,
    pub iterations: usize,
    /// Infinity norm of the gradient w.r.t. the open-loop controls.
    pub grad_inf: f64,
    /// Objective after every accepted step, starting point first.
    pub trace: Vec<f64>,
}

const ACCEPT_RATIO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 16;
const REG_MIN: f64 = 1e-9;
const REG_MAX: f64 = 1e10;
/// Relative size of objective changes treated as rounding noise.
const ROUNDING_FLOOR: f64 = 1e-13;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

struct Policy {
    feedforward: Vec<Vector2<f64>>,
    gain: Vec<Mat2x6>,
    /// Predicted change is `α·linear + α²·quadratic`.
    linear: f64,
    quadratic: f64,
    nominal: Vec<[f64; 4]>,
}

impl AugmentedLagrangian<'_> {
    /// Torque-change weight attached to the step into control `t`, so that
    /// `Σ_t c_t ‖u_t - u_{t-1}‖² / dt²` equals the knot-wise forward-difference
    /// sum (the last knot reuses the previous difference).
    fn step_weight(&self, t: usize) -> f64 {
        let n = self.n();
        if t == 0 {
            return 0.0;
        }
        let mut c = self.knot_weights[t - 1][TORQUE_CHANGE];
        if t == n - 1 {
            c += self.knot_weights[t][TORQUE_CHANGE];
        }
        c / (self.dt * self.dt)
    }

    /// Hinge gradient and diagonal curvature of the bound terms at knot `t`.
    fn bound_derivatives(&self, t: usize, x: &[f64; 4]) -> ([f64; 4], [f64; 4]) {
        let mut g = [0.0; 4];
        let mut h = [0.0; 4];
        let c = self.task.bound_residuals(x);
        let mu = &self.ineq_mult[(t - 1) * INEQ_PER_KNOT..t * INEQ_PER_KNOT];
        for i in 0..INEQ_PER_KNOT {
            let a = mu[i] + self.rho * c[i];
            if a > 0.0 {
                let (k, s) = BOUND_JACOBIAN[i];
                g[k] += a * s;
                h[k] += self.rho;
            }
        }
        (g, h)
    }

    /// Value function of the terminal terms in shooting coordinates.
    fn terminal_value(&self) -> (Vec6, Mat6) {
        let n = self.n();
        let xn = self.states[n];
        let mut vs = Vec6::zeros();
        let mut vss = Mat6::zeros();
        for (term, lam) in self.task.terminal_residuals(&xn).iter().zip(&self.eq_mult) {
            let a = lam + self.rho * term.value;
            for i in 0..4 {
                vs[i] += a * term.grad[i];
                for j in 0..4 {
                    vss[(i, j)] += self.rho * term.grad[i] * term.grad[j] + a * term.hess[i][j];
                }
            }
        }
        let (g, h) = self.bound_derivatives(n, &xn);
        for k in 0..4 {
            vs[k] += g[k];
            vss[(k, k)] += h[k];
        }
        (vs, vss)
    }

    /// Riccati sweep around the rollout stored by the last `value_grad`.
    /// `None` when a control Hessian is not positive definite.
    fn riccati(&self, u: &[f64], reg: f64) -> Option<Policy> {
        let n = self.n();
        let (mut vs, mut vss) = self.terminal_value();
        let mut feedforward = vec![Vector2::zeros(); n];
        let mut gain = vec![Mat2x6::zeros(); n];
        let (mut linear, mut quadratic) = (0.0, 0.0);

        for t in (0..n).rev() {
            let st = &self.stages[t];
            let w = &self.knot_weights[t];
            let x = &self.states[t];

            // stage cost derivatives in z = [x, u]
            let mut lz = [0.0; STAGE_DIM];
            let mut lzz = [[0.0; STAGE_DIM]; STAGE_DIM];
            for a in 0..STAGE_DIM {
                for j in 0..N_FEATURES {
                    lz[a] += w[j] * st.first.d_phi[j][a];
                }
                for b in 0..STAGE_DIM {
                    let mut v = 0.0;
                    for j in 0..N_FEATURES {
                        v += w[j] * st.dd_phi[j][a][b];
                    }
                    // V'_x-weighted dynamics curvature
                    for i in 0..4 {
                        v += vs[i] * st.dd_next[i][a][b];
                    }
                    lzz[a][b] = v;
                }
            }
            if t > 0 {
                let (g, h) = self.bound_derivatives(t, x);
                for k in 0..4 {
                    lz[k] += g[k];
                    lzz[k][k] += h[k];
                }
            }

            // A = ∂s'/∂s, B = ∂s'/∂u with s' = [f(x, u), u]
            let mut a_mat = Mat6::zeros();
            let mut b_mat = Mat6x2::zeros();
            for i in 0..4 {
                for k in 0..4 {
                    a_mat[(i, k)] = st.first.d_next[i][k];
                }
                b_mat[(i, 0)] = st.first.d_next[i][4];
                b_mat[(i, 1)] = st.first.d_next[i][5];
            }
            b_mat[(4, 0)] = 1.0;
            b_mat[(5, 1)] = 1.0;

            let mut ls = Vec6::zeros();
            let mut lu = Vector2::zeros();
            let mut lss = Mat6::zeros();
            let mut luu = Matrix2::zeros();
            let mut lus = Mat2x6::zeros();
            for a in 0..4 {
                ls[a] = lz[a];
                for b in 0..4 {
                    lss[(a, b)] = lzz[a][b];
                }
                for r in 0..2 {
                    lus[(r, a)] = lzz[4 + r][a];
                }
            }
            for r in 0..2 {
                lu[r] = lz[4 + r];
                for c in 0..2 {
                    luu[(r, c)] = lzz[4 + r][4 + c];
                }
            }
            let c = self.step_weight(t);
            if c > 0.0 {
                let prev = [u[2 * t - 2], u[2 * t - 1]];
                for r in 0..2 {
                    let d = u[2 * t + r] - prev[r];
                    lu[r] += 2.0 * c * d;
                    ls[4 + r] -= 2.0 * c * d;
                    luu[(r, r)] += 2.0 * c;
                    lss[(4 + r, 4 + r)] += 2.0 * c;
                    lus[(r, 4 + r)] -= 2.0 * c;
                }
            }

            let qs = ls + a_mat.transpose() * vs;
            let qu = lu + b_mat.transpose() * vs;
            let qss = lss + a_mat.transpose() * vss * a_mat;
            let quu = luu + b_mat.transpose() * vss * b_mat;
            let qus = lus + b_mat.transpose() * vss * a_mat;

            let quu_reg = quu + Matrix2::identity() * reg;
            let chol = Cholesky::new(quu_reg)?;
            let k = -chol.solve(&qu);
            let kk = -chol.solve(&qus);

            linear += k.dot(&qu);
            quadratic += 0.5 * (k.transpose() * quu * k)[(0, 0)];

            vs = qs + kk.transpose() * (quu * k) + kk.transpose() * qu + qus.transpose() * k;
            vss = qss + kk.transpose() * quu * kk + kk.transpose() * qus + qus.transpose() * kk;
            vss = 0.5 * (vss + vss.transpose());
            feedforward[t] = k;
            gain[t] = kk;
        }
        Some(Policy {
            feedforward,
            gain,
            linear,
            quadratic,
            nominal: self.states.clone(),
        })
    }

    /// Closed-loop rollout of `policy` with step `alpha`; returns the new
    /// open-loop controls.
    fn closed_loop(&self, u: &[f64], policy: &Policy, alpha: f64) -> Option<Vec<f64>> {
        let n = self.n();
        let mut out = vec![0.0; 2 * n];
        let mut x = self.x0;
        let mut prev = [0.0; 2];
        for t in 0..n {
            let mut ds = Vec6::zeros();
            for k in 0..4 {
                ds[k] = x[k] - policy.nominal[t][k];
            }
            if t > 0 {
                ds[4] = prev[0] - u[2 * t - 2];
                ds[5] = prev[1] - u[2 * t - 1];
            }
            let du = policy.feedforward[t] * alpha + policy.gain[t] * ds;
            let ut = [u[2 * t] + du[0], u[2 * t + 1] + du[1]];
            let st = stage_terms(&self.task.params, x, ut, self.dt)?;
            if !st.next.iter().all(|v| v.is_finite()) {
                return None;
            }
            x = st.next;
            prev = ut;
            out[2 * t] = ut[0];
            out[2 * t + 1] = ut[1];
        }
        Some(out)
    }
}

pub(crate) fn minimize(al: &mut AugmentedLagrangian, u: &mut Vec<f64>, settings: &InnerSettings) -> InnerReport {
    let mut grad = vec![0.0; u.len()];
    let Some(mut f) = al.value_grad(u, &mut grad) else {
        return InnerReport {
            status: InnerStatus::BadStart,
            iterations: 0,
            grad_inf: f64::NAN,
            trace: Vec::new(),
        };
    };
    let mut trace = vec![f];
    let mut reg = 0.0;
    let mut status = InnerStatus::MaxIterations;
    let mut iterations = 0;
    let mut floor_strikes = 0;
    let bump = |reg: f64| (reg * 10.0f64).max(REG_MIN * 10.0);

    'outer: while iterations < settings.max_iterations {
        let g_inf = inf_norm(&grad);
        if g_inf <= settings.gtol {
            status = InnerStatus::Converged;
            break;
        }
        let floor = ROUNDING_FLOOR * f.abs().max(1.0);
        let (accepted, at_floor) = loop {
            if reg > REG_MAX {
                status = InnerStatus::Stalled;
                break 'outer;
            }
            let Some(policy) = al.riccati(u, reg) else {
                reg = bump(reg);
                continue;
            };
            let mut alpha = 1.0;
            let mut found = None;
            for _ in 0..MAX_BACKTRACKS {
                let predicted = alpha * policy.linear + alpha * alpha * policy.quadratic;
                if predicted >= 0.0 {
                    break;
                }
                let at_floor = -predicted <= floor;
                if let Some(ft) = al.closed_loop(u, &policy, alpha).and_then(|trial| Some((al.value(&trial)?, trial))) {
                    let ok = if at_floor {
                        ft.0 - f <= floor
                    } else {
                        ft.0 - f <= ACCEPT_RATIO * predicted
                    };
                    if ok {
                        found = Some((ft.1, at_floor));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            match found {
                Some(step) => {
                    reg = if reg <= REG_MIN { 0.0 } else { reg / 10.0 };
                    break step;
                }
                None => {
                    reg = bump(reg);
                    al.states.copy_from_slice(&policy.nominal);
                }
            }
        };
        *u = accepted;
        match al.value_grad(u, &mut grad) {
            Some(v) => f = v,
            None => {
                status = InnerStatus::Stalled;
                break;
            }
        }
        trace.push(f);
        iterations += 1;
        if at_floor && inf_norm(&grad) > 0.5 * g_inf {
            floor_strikes += 1;
            if floor_strikes >= 3 {
                status = InnerStatus::Stalled;
                break;
            }
        } else {
            floor_strikes = 0;
        }
    }
    if status != InnerStatus::Converged && inf_norm(&grad) <= settings.gtol {
        status = InnerStatus::Converged;
    }
    InnerReport {
        status,
        iterations,
        grad_inf: inf_norm(&grad),
        trace,
    }
}
