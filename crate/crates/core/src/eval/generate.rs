use nalgebra::Vector2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::ArmParams;
use crate::data::{generate_synthetic, Dataset, GroundTruth, Noise, Posture, SyntheticSpec};
use crate::doc::{DocConfig, WeightMatrix};
use crate::error::{Error, Result};
use crate::features::{Feature, N_FEATURES};

/// A synthetic subject: the base arm with scaled segment lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: String,
    pub l1_scale: f64,
    pub l2_scale: f64,
}

impl SubjectSpec {
    /// Lengths and centre-of-mass offsets scale linearly, inertias quadratically.
    pub fn params(&self, base: &ArmParams) -> ArmParams {
        ArmParams {
            l1: base.l1 * self.l1_scale,
            l2: base.l2 * self.l2_scale,
            lc1: base.lc1 * self.l1_scale,
            lc2: base.lc2 * self.l2_scale,
            i1: base.i1 * self.l1_scale.powi(2),
            i2: base.i2 * self.l2_scale.powi(2),
            ..*base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostureStart {
    pub posture: Posture,
    /// Nominal initial joint angles (deg).
    pub q0_deg: [f64; 2],
}

impl PostureStart {
    pub fn q0(&self) -> Vector2<f64> {
        Vector2::new(self.q0_deg[0].to_radians(), self.q0_deg[1].to_radians())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub base_params: ArmParams,
    pub subjects: Vec<SubjectSpec>,
    pub postures: Vec<PostureStart>,
    pub target_x: f64,
    /// Nominal reach duration (s).
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    /// Ground-truth weights; their window count sets the generating layout.
    pub weights: WeightMatrix,
    pub noise: Noise,
    pub seed: u64,
    pub doc: DocConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let start = |posture, q1: f64, q2: f64| PostureStart {
            posture,
            q0_deg: [q1, q2],
        };
        GenerateConfig {
            base_params: ArmParams::default(),
            subjects: vec![
                SubjectSpec {
                    id: "A".into(),
                    l1_scale: 1.0,
                    l2_scale: 1.0,
                },
                SubjectSpec {
                    id: "B".into(),
                    l1_scale: 1.05,
                    l2_scale: 0.95,
                },
            ],
            postures: vec![
                start(Posture::P1, 20.0, 110.0),
                start(Posture::P2, 40.0, 100.0),
                start(Posture::P3, 60.0, 90.0),
                start(Posture::P4, 30.0, 120.0),
                start(Posture::P5, 50.0, 80.0),
            ],
            target_x: 0.45,
            horizon: 1.0,
            dt: 0.01,
            trials: 20,
            weights: phased_weights(),
            noise: Noise {
                q0_sigma: 0.02,
                duration_sigma: 0.03,
            },
            seed: 7,
            doc: DocConfig::default(),
        }
    }
}

/// Six windows moving from acceleration smoothness through hand speed to torque effort.
pub fn phased_weights() -> WeightMatrix {
    let phase = |main: Feature, second: Feature| {
        let mut column = [0.01; N_FEATURES];
        column[main.index()] = 1.0;
        column[second.index()] = 0.3;
        column
    };
    WeightMatrix::from_columns(vec![
        phase(Feature::JointAcceleration, Feature::TorqueChange),
        phase(Feature::JointAcceleration, Feature::JointVelocity),
        phase(Feature::CartesianVelocity, Feature::JointAcceleration),
        phase(Feature::CartesianVelocity, Feature::Geodesic),
        phase(Feature::JointTorque, Feature::Energy),
        phase(Feature::JointTorque, Feature::JointVelocity),
    ])
    .expect("positive phase weights")
}

/// Ground truth of one subject and posture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSubject {
    pub subject: String,
    pub posture: Posture,
    pub params: ArmParams,
    pub truth: GroundTruth,
}

/// One dataset holding every configured subject and posture.
pub fn generate(config: &GenerateConfig) -> Result<(Dataset, Vec<GeneratedSubject>)> {
    let n_windows = config.weights.n_windows();
    let per_window = (config.horizon / (config.dt * n_windows as f64)).round();
    if !(per_window >= 2.0) {
        return Err(Error::CoarseGrid(format!(
            "horizon {} s at dt {} s leaves {per_window} samples per window",
            config.horizon, config.dt
        )));
    }
    let mut specs = Vec::new();
    for (s, subject) in config.subjects.iter().enumerate() {
        for start in &config.postures {
            // independent stream per (subject, posture)
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(((s as u64) << 8) | (start.posture as u64 + 1));
            specs.push(SyntheticSpec {
                subject: subject.id.clone(),
                posture: start.posture,
                params: subject.params(&config.base_params),
                weights: config.weights.clone(),
                q0: start.q0(),
                target_x: config.target_x,
                horizon: config.horizon,
                samples_per_window: per_window as usize,
                trials: config.trials,
                noise: config.noise,
                seed: rng.next_u64(),
                doc: config.doc.clone(),
            });
        }
    }
    let generated: Vec<Result<(Dataset, GroundTruth)>> = specs.par_iter().map(generate_synthetic).collect();
    let mut dataset = Dataset::default();
    let mut truths = Vec::new();
    for (spec, outcome) in specs.iter().zip(generated) {
        let (part, truth) = outcome?;
        dataset = dataset.merge(part)?;
        truths.push(GeneratedSubject {
            subject: spec.subject.clone(),
            posture: spec.posture,
            params: spec.params,
            truth,
        });
    }
    Ok((dataset, truths))
}
