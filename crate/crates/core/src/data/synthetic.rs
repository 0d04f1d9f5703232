use log::warn;
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{raw_from_trajectory, Dataset, Posture, TrialMeta};
use crate::arm::ArmParams;
use crate::doc::{solve_doc, DocConfig, ReachTask, WeightMatrix};
use crate::error::{Error, Result};
use crate::features::SectionLayout;

/// Attempts per trial before generation gives up.
const MAX_ATTEMPTS: usize = 5;

/// Standard deviations of the per-trial perturbations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Added independently to each initial joint angle (rad).
    pub q0_sigma: f64,
    /// Added to the movement duration (s).
    pub duration_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub subject: String,
    pub posture: Posture,
    pub params: ArmParams,
    /// Ground-truth weights; their window count fixes the layout.
    pub weights: WeightMatrix,
    pub q0: Vector2<f64>,
    pub target_x: f64,
    /// Nominal duration (s).
    pub horizon: f64,
    pub samples_per_window: usize,
    pub trials: usize,
    pub noise: Noise,
    pub seed: u64,
    #[serde(default)]
    pub doc: DocConfig,
}

/// What generated a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub omega_true: WeightMatrix,
    pub seed: u64,
    pub noise: Noise,
}

/// Optimal reaches under `spec.weights` from jittered postures and durations.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.params.validate()?;
    if spec.noise.q0_sigma < 0.0 || spec.noise.duration_sigma < 0.0 {
        return Err(Error::Contract("noise standard deviations must be nonnegative".into()));
    }
    let layout = SectionLayout::new(spec.weights.n_windows(), spec.samples_per_window)?;
    let q0_noise = Normal::new(0.0, spec.noise.q0_sigma).map_err(|e| Error::Contract(e.to_string()))?;
    let duration_noise = Normal::new(0.0, spec.noise.duration_sigma).map_err(|e| Error::Contract(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut dataset = Dataset::default();
    dataset.subjects.insert(spec.subject.clone(), spec.params);
    for trial in 0..spec.trials {
        let mut attempt = 0;
        let solution = loop {
            attempt += 1;
            let q0 = spec.q0 + Vector2::new(q0_noise.sample(&mut rng), q0_noise.sample(&mut rng));
            let horizon = (spec.horizon + duration_noise.sample(&mut rng)).max(0.5 * spec.horizon);
            let task = ReachTask::new(spec.params, q0, spec.target_x, horizon, layout);
            match solve_doc(&task.with_weights(spec.weights.clone()), &spec.doc, None) {
                Ok(sol) if sol.converged => break sol,
                outcome => {
                    let why = match outcome {
                        Ok(_) => "did not converge".to_owned(),
                        Err(e) => e.to_string(),
                    };
                    if attempt >= MAX_ATTEMPTS {
                        return Err(Error::DocFailed(format!(
                            "synthetic trial {trial} failed {MAX_ATTEMPTS} times, last: {why}"
                        )));
                    }
                    warn!("synthetic trial {trial} attempt {attempt} {why}; resampling");
                }
            }
        };
        let meta = TrialMeta {
            subject: spec.subject.clone(),
            posture: spec.posture,
            trial: trial as u32,
            target_x: Some(spec.target_x),
        };
        dataset.demos.push(raw_from_trajectory(&solution.trajectory, meta));
    }
    let truth = GroundTruth {
        omega_true: spec.weights.clone(),
        seed: spec.seed,
        noise: spec.noise,
    };
    Ok((dataset, truth))
}
