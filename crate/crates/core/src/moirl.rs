//! Iterative multi-section weight learning from demonstrations.
//!
//! Each iteration fits a weight increment that makes the demonstrations more
//! likely than the most recent generated trajectory, then accepts a scaled
//! version of it only if the regenerated trajectory moves closer to the demos.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arm::ArmParams;
use crate::doc::{solve_doc, DocConfig, DocSolution, ReachTask, WeightMatrix};
use crate::error::{Error, Result};
use crate::features::{compute_features, FeatureMatrix, SectionLayout, Trajectory, N_FEATURES};

/// A trajectory together with its feature integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub trajectory: Trajectory,
    pub features: FeatureMatrix,
}

impl Observation {
    pub fn new(trajectory: Trajectory, layout: &SectionLayout, params: &ArmParams) -> Result<Self> {
        let features = compute_features(&trajectory, layout, params)?;
        Ok(Observation { trajectory, features })
    }
}

/// Demonstrations on one common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    demos: Vec<Observation>,
    layout: SectionLayout,
}

impl DemoSet {
    pub fn new(trajectories: Vec<Trajectory>, layout: SectionLayout, params: &ArmParams) -> Result<Self> {
        let demos = trajectories
            .into_iter()
            .map(|t| Observation::new(t, &layout, params))
            .collect::<Result<Vec<_>>>()?;
        Self::from_observations(demos, layout)
    }

    pub fn from_observations(demos: Vec<Observation>, layout: SectionLayout) -> Result<Self> {
        let Some(first) = demos.first() else {
            return Err(Error::Contract("a demo set needs at least one demonstration".into()));
        };
        let dt = first.trajectory.dt;
        for (d, demo) in demos.iter().enumerate() {
            layout.check(&demo.trajectory)?;
            if (demo.trajectory.dt - dt).abs() > 1e-12 * dt {
                return Err(Error::ShapeMismatch(format!("demo {d} has dt {} instead of {dt}", demo.trajectory.dt)));
            }
            if demo.features.n_windows() != layout.n_windows {
                return Err(Error::ShapeMismatch(format!("demo {d} features do not match the layout")));
            }
        }
        Ok(DemoSet { demos, layout })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn demos(&self) -> &[Observation] {
        &self.demos
    }

    pub fn layout(&self) -> &SectionLayout {
        &self.layout
    }

    pub fn dt(&self) -> f64 {
        self.demos[0].trajectory.dt
    }

    /// Feature matrix averaged over demonstrations.
    pub fn mean_features(&self) -> FeatureMatrix {
        let d = self.demos.len() as f64;
        let columns = (0..self.layout.n_windows)
            .map(|s| std::array::from_fn(|j| self.demos.iter().map(|o| o.features.get(j, s)).sum::<f64>() / d))
            .collect();
        FeatureMatrix::from_columns(columns)
    }
}

/// Generated trajectories the demonstrations are contrasted against.
///
/// Only the most recent trajectory is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSet {
    observations: Vec<Observation>,
}

impl ObservedSet {
    pub fn new(first: Observation) -> Self {
        ObservedSet {
            observations: vec![first],
        }
    }

    pub fn replace(&mut self, latest: Observation) {
        self.observations.clear();
        self.observations.push(latest);
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn latest(&self) -> &Observation {
        self.observations.last().expect("observed set is never empty")
    }
}

/// A signed weight increment with the shape of a [`WeightMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDelta {
    columns: Vec<[f64; N_FEATURES]>,
}

impl WeightDelta {
    pub fn zeros(n_windows: usize) -> Self {
        WeightDelta {
            columns: vec![[0.0; N_FEATURES]; n_windows],
        }
    }

    pub fn from_columns(columns: Vec<[f64; N_FEATURES]>) -> Self {
        WeightDelta { columns }
    }

    /// Window-major flat vector, as in [`FeatureMatrix::flat`].
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || flat.len() % N_FEATURES != 0 {
            return Err(Error::ShapeMismatch(format!(
                "flat increment of length {} is not a multiple of {N_FEATURES}",
                flat.len()
            )));
        }
        Ok(WeightDelta {
            columns: flat
                .chunks_exact(N_FEATURES)
                .map(|c| std::array::from_fn(|j| c[j]))
                .collect(),
        })
    }

    pub fn columns(&self) -> &[[f64; N_FEATURES]] {
        &self.columns
    }

    pub fn flat(&self) -> Vec<f64> {
        self.columns.iter().flatten().copied().collect()
    }

    pub fn get(&self, feature: usize, window: usize) -> f64 {
        self.columns[window][feature]
    }

    pub fn inf_norm(&self) -> f64 {
        self.columns.iter().flatten().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MoirlConfig {
    /// L2 regularizer on the increment.
    pub beta: f64,
    /// Uniform initial weight.
    pub init_weight: f64,
    pub alpha0: f64,
    pub alpha_shrink: f64,
    pub max_line_trials: usize,
    pub max_iterations: usize,
    /// Stop once the first trial step `‖α₀Δω‖∞` falls below this.
    pub delta_tol: f64,
    /// Per-step bound `‖Δω‖∞ ≤ trust_bound`.
    pub trust_bound: f64,
    /// Weights stay at least this far above zero after a full step.
    pub mu_floor: f64,
    /// Projected-gradient tolerance of the increment solver.
    pub delta_gtol: f64,
    pub delta_max_iterations: usize,
    pub doc: DocConfig,
}

impl Default for MoirlConfig {
    fn default() -> Self {
        MoirlConfig {
            beta: 1e-10,
            init_weight: 0.05,
            alpha0: 1.0,
            alpha_shrink: 0.25,
            max_line_trials: 10,
            max_iterations: 100,
            delta_tol: 1e-8,
            trust_bound: 10.0,
            mu_floor: 1e-12,
            delta_gtol: 1e-8,
            delta_max_iterations: 500,
            doc: DocConfig::default(),
        }
    }
}

impl MoirlConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta >= 0.0
            && self.init_weight > 0.0
            && self.alpha0 > 0.0
            && self.alpha0 <= 1.0
            && self.alpha_shrink > 0.0
            && self.alpha_shrink < 1.0
            && self.max_line_trials >= 1
            && self.trust_bound > 0.0
            && self.mu_floor >= 0.0
            && self.delta_gtol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract("invalid learning configuration".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LineSearchExhausted,
    MaxIterations,
    DeltaTol,
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub merit: f64,
    /// `‖Δω*‖∞` before scaling.
    pub delta_norm: f64,
    pub alpha: f64,
    /// Weighted cost of the accepted trajectory.
    pub objective: f64,
    pub doc_solves: usize,
    /// Log-probability of the mean demonstration against the observed set,
    /// before and after the step.
    pub log_prob_before: f64,
    pub log_prob_after: f64,
    /// Weights after the step.
    pub weights: WeightMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnResult {
    pub weights: WeightMatrix,
    pub history: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub seed_merit: f64,
    pub merit: f64,
    pub trajectory: Trajectory,
    pub doc_solves: usize,
}

/// `Σ_s ⟨w_s, Φ_i[:,s] − Φ*_d[:,s]⟩` for weights or increments given by column.
pub fn section_cost(weights: &[[f64; N_FEATURES]], observed: &FeatureMatrix, demo: &FeatureMatrix) -> Result<f64> {
    if weights.len() != observed.n_windows() || weights.len() != demo.n_windows() {
        return Err(Error::ShapeMismatch(format!(
            "{} weight windows, {} observed, {} demo",
            weights.len(),
            observed.n_windows(),
            demo.n_windows()
        )));
    }
    Ok(weights
        .iter()
        .zip(observed.columns().iter().zip(demo.columns()))
        .map(|(w, (a, b))| (0..N_FEATURES).map(|j| w[j] * (a[j] - b[j])).sum::<f64>())
        .sum())
}

/// `exp(−C(x_i, ω))` relative to demonstration `d`.
pub fn gamma(weights: &WeightMatrix, observed: &FeatureMatrix, demo: &FeatureMatrix) -> Result<f64> {
    Ok((-section_cost(weights.columns(), observed, demo)?).exp())
}

/// `log(e^0 + Σ_k e^{z_k})` evaluated with every exponent shifted by `shift`.
pub fn log1p_sum_exp_shifted(z: &[f64], shift: f64) -> f64 {
    let s = (-shift).exp() + z.iter().map(|v| (v - shift).exp()).sum::<f64>();
    shift + s.ln()
}

/// `log(1 + Σ_k e^{z_k})` with the shift at the largest exponent.
pub fn log1p_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(0.0f64, |a, &b| a.max(b));
    if m == 0.0 {
        z.iter().map(|v| v.exp()).sum::<f64>().ln_1p()
    } else {
        log1p_sum_exp_shifted(z, m)
    }
}

/// The increment objective
/// `Σ_d log(1 + Σ_i γ_{id} e^{−C_{id}(Δω)}) + β/2 ‖Δω‖²` over flat increments.
#[derive(Debug, Clone)]
pub struct DeltaObjective {
    /// Per demo: `(log γ_{id}, Φ_i − Φ*_d flattened)` for every observation.
    terms: Vec<Vec<(f64, Vec<f64>)>>,
    beta: f64,
    dim: usize,
}

impl DeltaObjective {
    pub fn new(weights: &WeightMatrix, observed: &ObservedSet, demos: &DemoSet, beta: f64) -> Result<Self> {
        let dim = weights.n_windows() * N_FEATURES;
        let mut terms = Vec::with_capacity(demos.len());
        for demo in demos.demos() {
            let mut per_demo = Vec::with_capacity(observed.observations().len());
            for obs in observed.observations() {
                let log_gamma = -section_cost(weights.columns(), &obs.features, &demo.features)?;
                let diff: Vec<f64> = obs
                    .features
                    .flat()
                    .iter()
                    .zip(demo.features.flat())
                    .map(|(a, b)| a - b)
                    .collect();
                per_demo.push((log_gamma, diff));
            }
            terms.push(per_demo);
        }
        Ok(DeltaObjective { terms, beta, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn exponents(&self, per_demo: &[(f64, Vec<f64>)], delta: &[f64]) -> Vec<f64> {
        per_demo
            .iter()
            .map(|(lg, v)| lg - v.iter().zip(delta).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn value(&self, delta: &[f64]) -> f64 {
        let reg = 0.5 * self.beta * delta.iter().map(|v| v * v).sum::<f64>();
        reg + self
            .terms
            .iter()
            .map(|t| log1p_sum_exp(&self.exponents(t, delta)))
            .sum::<f64>()
    }

    /// Objective with every log-sum-exp shifted by `shift` instead of its maximum.
    pub fn value_with_shift(&self, delta: &[f64], shift: f64) -> f64 {
        let reg = 0.5 * self.beta * delta.iter().map(|v| v * v).sum::<f64>();
        reg + self
            .terms
            .iter()
            .map(|t| log1p_sum_exp_shifted(&self.exponents(t, delta), shift))
            .sum::<f64>()
    }

    /// Softmax weights `e^{z_i} / (1 + Σ_k e^{z_k})`.
    fn probabilities(z: &[f64]) -> Vec<f64> {
        let m = z.iter().fold(0.0f64, |a, &b| a.max(b));
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s = (-m).exp() + e.iter().sum::<f64>();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn gradient(&self, delta: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = delta.iter().map(|v| self.beta * v).collect();
        for t in &self.terms {
            let p = Self::probabilities(&self.exponents(t, delta));
            for (pi, (_, v)) in p.iter().zip(t) {
                for (gk, vk) in g.iter_mut().zip(v) {
                    *gk -= pi * vk;
                }
            }
        }
        g
    }

    pub fn hessian(&self, delta: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut h = DMatrix::<f64>::identity(n, n) * self.beta;
        for t in &self.terms {
            let p = Self::probabilities(&self.exponents(t, delta));
            let mut mean = DVector::<f64>::zeros(n);
            for (pi, (_, v)) in p.iter().zip(t) {
                let v = DVector::from_column_slice(v);
                h.ger(*pi, &v, &v, 1.0);
                mean.axpy(*pi, &v, 1.0);
            }
            h.ger(-1.0, &mean, &mean, 1.0);
        }
        h
    }
}

/// Lower and upper bounds on each flat increment entry.
pub fn delta_bounds(weights: &WeightMatrix, config: &MoirlConfig) -> (Vec<f64>, Vec<f64>) {
    let lo = weights
        .flat()
        .iter()
        .map(|w| (config.mu_floor - w).max(-config.trust_bound))
        .collect();
    (lo, vec![config.trust_bound; weights.n_windows() * N_FEATURES])
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if (xi <= l && gi > 0.0) || (xi >= h && gi < 0.0) {
                0.0
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Minimize the increment objective over the bound box by projected Newton.
pub fn solve_delta(
    weights: &WeightMatrix,
    observed: &ObservedSet,
    demos: &DemoSet,
    config: &MoirlConfig,
) -> Result<WeightDelta> {
    if weights.n_windows() != demos.layout().n_windows {
        return Err(Error::ShapeMismatch("weights and demo layout differ".into()));
    }
    let objective = DeltaObjective::new(weights, observed, demos, config.beta)?;
    let (lo, hi) = delta_bounds(weights, config);
    let flat = minimize_in_box(&objective, &lo, &hi, config.delta_gtol, config.delta_max_iterations)?;
    WeightDelta::from_flat(&flat)
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

/// Bertsekas-style projected Newton with an ε-active set and an Armijo
/// search along the projection arc.
///
/// Besides the projected-gradient test, the Newton decrement on the free
/// variables must be negligible: with a tiny regularizer the loss saturates
/// long before its regularized minimizer, and the gradient alone cannot tell
/// the two apart.
fn minimize_in_box(objective: &DeltaObjective, lo: &[f64], hi: &[f64], gtol: f64, max_iterations: usize) -> Result<Vec<f64>> {
    const SIGMA: f64 = 1e-4;
    const ACTIVE_EPS: f64 = 1e-6;
    const DECREMENT_TOL: f64 = 1e-13;
    let n = objective.dim();
    let mut x = vec![0.0; n];
    clamp_into(&mut x, lo, hi);
    let mut f = objective.value(&x);

    for iteration in 0..max_iterations {
        let g = objective.gradient(&x);
        let grad_norm = projected_gradient_norm(&x, &g, lo, hi);

        let gap = x
            .iter()
            .zip(&g)
            .zip(lo.iter().zip(hi))
            .map(|((xi, gi), (l, h))| (xi - (xi - gi).clamp(*l, *h)).abs())
            .fold(0.0, f64::max);
        let eps = ACTIVE_EPS.min(gap);
        let active: Vec<bool> = (0..n)
            .map(|k| (x[k] <= lo[k] + eps && g[k] > 0.0) || (x[k] >= hi[k] - eps && g[k] < 0.0))
            .collect();
        let free: Vec<usize> = (0..n).filter(|&k| !active[k]).collect();

        let h = objective.hessian(&x);
        let mut dir = vec![0.0; n];
        for k in 0..n {
            if active[k] {
                dir[k] = -g[k] / h[(k, k)].max(1e-12);
            }
        }
        if !free.is_empty() {
            let m = free.len();
            let scale = free.iter().map(|&k| h[(k, k)]).fold(0.0, f64::max).max(1e-300);
            let mut damping = 1e-14 * scale;
            let rhs = DVector::from_iterator(m, free.iter().map(|&k| -g[k]));
            let step = loop {
                let sub = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])] + if a == b { damping } else { 0.0 });
                if let Some(ch) = sub.cholesky() {
                    break ch.solve(&rhs);
                }
                damping *= 10.0;
                if damping > 1e6 * scale {
                    break rhs.clone() / scale;
                }
            };
            for (a, &k) in free.iter().enumerate() {
                dir[k] = step[a];
            }
        }
        let decrement: f64 = free.iter().map(|&k| -g[k] * dir[k]).sum();
        let settled = decrement <= DECREMENT_TOL * f.abs().max(1.0);
        if grad_norm < gtol && settled {
            debug!("increment solver converged in {iteration} iterations");
            return Ok(x);
        }

        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            clamp_into(&mut trial, lo, hi);
            let predicted: f64 = (0..n)
                .map(|k| if active[k] { g[k] * (x[k] - trial[k]) } else { -t * g[k] * dir[k] })
                .sum();
            let ft = objective.value(&trial);
            let floor = 1e-15 * f.abs().max(1.0);
            if f - ft >= SIGMA * predicted || (predicted.abs() < floor && ft <= f + floor) {
                moved = trial != x;
                x = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // no representable progress is left
            if grad_norm < gtol {
                return Ok(x);
            }
            return Err(Error::DeltaSolver {
                iterations: iteration + 1,
                grad_norm,
                last_iterate: x,
            });
        }
    }
    let g = objective.gradient(&x);
    let grad_norm = projected_gradient_norm(&x, &g, lo, hi);
    if grad_norm < gtol {
        return Ok(x);
    }
    Err(Error::DeltaSolver {
        iterations: max_iterations,
        grad_norm,
        last_iterate: x,
    })
}

/// `(1/D) Σ_d (1/n) Σ_t ‖x*_{d,t} − x_t‖²` over stacked `[q, q̇]` samples.
pub fn merit(demos: &DemoSet, traj: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    for demo in demos.demos() {
        let reference = &demo.trajectory;
        if reference.n_samples() != traj.n_samples() || (reference.dt - traj.dt).abs() > 1e-12 * traj.dt {
            return Err(Error::ShapeMismatch(format!(
                "trajectory grid ({} samples, dt {}) differs from demo grid ({}, {})",
                traj.n_samples(),
                traj.dt,
                reference.n_samples(),
                reference.dt
            )));
        }
        let sum: f64 = reference
            .states
            .iter()
            .zip(&traj.states)
            .map(|(a, b)| a.to_array().iter().zip(b.to_array()).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
            .sum();
        total += sum / traj.n_samples() as f64;
    }
    Ok(total / demos.len() as f64)
}

/// Log-probability of the mean demonstration against the observed set.
pub fn demo_log_probability(weights: &WeightMatrix, observed: &ObservedSet, demos: &DemoSet) -> Result<f64> {
    let mean = demos.mean_features();
    let z = observed
        .observations()
        .iter()
        .map(|o| section_cost(weights.columns(), &o.features, &mean).map(|c| -c))
        .collect::<Result<Vec<_>>>()?;
    Ok(-log1p_sum_exp(&z))
}

/// `ω + αΔω`, kept strictly positive against rounding.
pub fn step_weights(weights: &WeightMatrix, delta: &WeightDelta, alpha: f64, mu_floor: f64) -> Result<WeightMatrix> {
    if delta.columns().len() != weights.n_windows() {
        return Err(Error::ShapeMismatch("increment and weights differ in windows".into()));
    }
    let floor = (alpha * mu_floor).max(f64::MIN_POSITIVE);
    let columns = weights
        .columns()
        .iter()
        .zip(delta.columns())
        .map(|(w, d)| std::array::from_fn(|j| (w[j] + alpha * d[j]).max(floor)))
        .collect();
    WeightMatrix::from_columns(columns)
}

#[derive(Debug, Clone)]
pub struct AcceptedStep {
    pub weights: WeightMatrix,
    pub solution: DocSolution,
    pub merit: f64,
    pub alpha: f64,
    pub doc_solves: usize,
}

#[derive(Debug, Clone)]
pub enum LineSearchOutcome {
    Accepted(Box<AcceptedStep>),
    Rejected { doc_solves: usize },
}

/// Try `α = α₀, α₀·shrink, ...` and accept the first step whose DOC solution
/// has merit strictly below `best_merit`.
pub fn line_search(
    weights: &WeightMatrix,
    delta: &WeightDelta,
    demos: &DemoSet,
    template: &ReachTask,
    config: &MoirlConfig,
    best_merit: f64,
) -> Result<LineSearchOutcome> {
    let mut alpha = config.alpha0;
    for trial in 0..config.max_line_trials {
        let candidate = step_weights(weights, delta, alpha, config.mu_floor)?;
        let problem = template.with_weights(candidate.clone());
        match solve_doc(&problem, &config.doc, None) {
            Ok(solution) if solution.converged => {
                let m = merit(demos, &solution.trajectory)?;
                debug!("trial {trial}: alpha {alpha:e}, merit {m:e}");
                if m < best_merit {
                    return Ok(LineSearchOutcome::Accepted(Box::new(AcceptedStep {
                        weights: candidate,
                        solution,
                        merit: m,
                        alpha,
                        doc_solves: trial + 1,
                    })));
                }
            }
            Ok(_) => debug!("trial {trial}: alpha {alpha:e}, DOC did not converge"),
            Err(e) => debug!("trial {trial}: alpha {alpha:e}, DOC failed: {e}"),
        }
        alpha *= config.alpha_shrink;
    }
    Ok(LineSearchOutcome::Rejected {
        doc_solves: config.max_line_trials,
    })
}

fn check_template(demos: &DemoSet, template: &ReachTask) -> Result<()> {
    template.validate()?;
    if template.layout != *demos.layout() {
        return Err(Error::ShapeMismatch("template layout differs from the demo layout".into()));
    }
    if (template.dt() - demos.dt()).abs() > 1e-9 * demos.dt() {
        return Err(Error::ShapeMismatch(format!(
            "template dt {} differs from demo dt {}",
            template.dt(),
            demos.dt()
        )));
    }
    Ok(())
}

/// Learn section weights that reproduce `demos` with the reach `template`.
pub fn run_moirl(demos: &DemoSet, template: &ReachTask, config: &MoirlConfig) -> Result<LearnResult> {
    config.validate()?;
    check_template(demos, template)?;
    let n_windows = demos.layout().n_windows;

    let mut weights = WeightMatrix::uniform(n_windows, config.init_weight);
    let seed = solve_doc(&template.with_weights(weights.clone()), &config.doc, None)?;
    if !seed.converged {
        return Err(Error::DocFailed("seed solve at the initial weights did not converge".into()));
    }
    let mut doc_solves = 1;
    let seed_merit = merit(demos, &seed.trajectory)?;
    let mut best = seed_merit;
    let mut trajectory = seed.trajectory.clone();
    let mut observed = ObservedSet::new(Observation {
        trajectory: seed.trajectory,
        features: seed.features,
    });
    let mut history = Vec::new();
    info!("seed merit {seed_merit:e}");

    let mut stop_reason = StopReason::MaxIterations;
    for iteration in 0..config.max_iterations {
        let delta = solve_delta(&weights, &observed, demos, config)?;
        let delta_norm = delta.inf_norm();
        if config.alpha0 * delta_norm < config.delta_tol {
            stop_reason = StopReason::DeltaTol;
            break;
        }
        match line_search(&weights, &delta, demos, template, config, best)? {
            LineSearchOutcome::Accepted(step) => {
                let step = *step;
                doc_solves += step.doc_solves;
                let log_prob_before = demo_log_probability(&weights, &observed, demos)?;
                let log_prob_after = demo_log_probability(&step.weights, &observed, demos)?;
                info!(
                    "iteration {iteration}: merit {:e}, alpha {:e}, |delta| {delta_norm:e}",
                    step.merit, step.alpha
                );
                history.push(IterationRecord {
                    iteration,
                    merit: step.merit,
                    delta_norm,
                    alpha: step.alpha,
                    objective: step.solution.objective,
                    doc_solves: step.doc_solves,
                    log_prob_before,
                    log_prob_after,
                    weights: step.weights.clone(),
                });
                weights = step.weights;
                best = step.merit;
                trajectory = step.solution.trajectory.clone();
                observed.replace(Observation {
                    trajectory: step.solution.trajectory,
                    features: step.solution.features,
                });
            }
            LineSearchOutcome::Rejected { doc_solves: n } => {
                doc_solves += n;
                stop_reason = StopReason::LineSearchExhausted;
                break;
            }
        }
    }

    Ok(LearnResult {
        weights,
        history,
        stop_reason,
        seed_merit,
        merit: best,
        trajectory,
        doc_solves,
    })
}
