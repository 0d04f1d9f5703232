use std::fs;
use std::sync::OnceLock;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reach_irl::arm::JointState;
use reach_irl::data::{Dataset, Noise, Posture, RawDemo, TrialMeta};
use reach_irl::doc::WeightMatrix;
use reach_irl::eval::{
    export_weights, generate, joint_rmse, load_models, normalized_weights, read_report, save_runs, split_trials,
    write_report, Experiment, ExperimentConfig, GenerateConfig, MeanStd, PostureStart, RmseReport, Split,
    TrainOutput, TrainedModel, ALL_POSTURES, NORMALIZED_CSV,
};
use reach_irl::features::{Feature, Trajectory, N_FEATURES};

fn tiny_generate(noise: Noise) -> GenerateConfig {
    let mut weights = WeightMatrix::uniform(2, 0.01);
    weights.set(Feature::JointTorque.index(), 0, 1.0);
    weights.set(Feature::JointAcceleration.index(), 1, 1.0);
    let mut config = GenerateConfig {
        target_x: 0.3,
        horizon: 0.4,
        dt: 0.02,
        trials: 4,
        weights,
        noise,
        seed: 21,
        ..GenerateConfig::default()
    };
    config.postures = vec![
        PostureStart {
            posture: Posture::P3,
            q0_deg: [50.0, 80.0],
        },
        PostureStart {
            posture: Posture::P5,
            q0_deg: [40.0, 90.0],
        },
    ];
    config
}

fn tiny_experiment_config() -> ExperimentConfig {
    ExperimentConfig {
        subject: Some("A".into()),
        sections: vec![1, 2],
        train_count: 2,
        dt: 0.02,
        seed: 4,
        ..ExperimentConfig::default()
    }
}

fn jittered() -> Noise {
    Noise {
        q0_sigma: 0.02,
        duration_sigma: 0.01,
    }
}

struct Trained {
    experiment: Experiment,
    output: TrainOutput,
}

/// One jittered tiny experiment shared by the tests that only read it.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let (dataset, _) = generate(&tiny_generate(jittered())).unwrap();
        let experiment = Experiment::new(tiny_experiment_config(), dataset).unwrap();
        let output = experiment.train();
        Trained { experiment, output }
    })
}

fn trajectory(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    let states = (0..=n)
        .map(|_| JointState::new(Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)), Vector2::zeros()))
        .collect();
    Trajectory::new(states, vec![Vector2::zeros(); n], 0.01).unwrap()
}

#[test]
fn joint_rmse_matches_elementwise_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let a = trajectory(&mut rng, 30);
        let b = trajectory(&mut rng, 30);
        let r = joint_rmse(&a, &b).unwrap();
        let mut per_joint = [0.0f64; 2];
        let mut pooled = Vec::new();
        for t in 0..a.states.len() {
            for j in 0..2 {
                let e = (a.states[t].q[j] - b.states[t].q[j]).to_degrees();
                per_joint[j] += e * e;
                pooled.push(e * e);
            }
        }
        let n = a.states.len() as f64;
        assert!((r.q1 - (per_joint[0] / n).sqrt()).abs() < 1e-10);
        assert!((r.q2 - (per_joint[1] / n).sqrt()).abs() < 1e-10);
        assert!((r.q - (pooled.iter().sum::<f64>() / pooled.len() as f64).sqrt()).abs() < 1e-10);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    assert!(joint_rmse(&trajectory(&mut rng, 30), &trajectory(&mut rng, 31)).is_err());
}

#[test]
fn trial_split_is_a_seeded_partition() {
    let ids: Vec<u32> = (0..20).collect();
    let a = split_trials(1, Posture::P2, &ids, 10).unwrap();
    assert_eq!(a, split_trials(1, Posture::P2, &ids, 10).unwrap());
    assert_eq!((a.train.len(), a.test.len()), (10, 10));
    let mut union: Vec<u32> = a.train.iter().chain(&a.test).copied().collect();
    union.sort_unstable();
    assert_eq!(union, ids);
    assert_ne!(a, split_trials(2, Posture::P2, &ids, 10).unwrap());
    assert_ne!(a, split_trials(1, Posture::P3, &ids, 10).unwrap());
    assert!(split_trials(1, Posture::P2, &ids[..5], 10).is_err());
}

#[test]
fn training_produces_one_model_per_posture_and_section_count() {
    let t = trained();
    assert!(t.output.diagnostics.iter().all(|d| !d.contains("failed")), "{:?}", t.output.diagnostics);
    let keys: Vec<(Posture, usize)> = t.output.runs.iter().map(|r| r.model.key()).collect();
    assert_eq!(keys, vec![(Posture::P3, 1), (Posture::P3, 2), (Posture::P5, 1), (Posture::P5, 2)]);
    for run in &t.output.runs {
        assert_eq!(run.model.split.train.len(), 2);
        assert_eq!(run.model.split.test.len(), 2);
        assert!(run.model.weights.min_entry() > 0.0);
        assert_eq!(run.train_row.n_trials + run.train_row.failed.len(), 2);
        assert!(run.model.merit <= run.model.seed_merit);
    }
}

#[test]
fn retraining_with_the_same_seed_is_identical() {
    let t = trained();
    let again = t.experiment.train();
    assert_eq!(t.output.models(), again.models());
    let rows = |o: &TrainOutput| o.runs.iter().map(|r| r.train_row.clone()).collect::<Vec<_>>();
    assert_eq!(rows(&t.output), rows(&again));
}

#[test]
fn report_rows_aggregate_their_trials() {
    let t = trained();
    let mut report = RmseReport::default();
    report.set_split(Split::Train, t.output.runs.iter().map(|r| r.train_row.clone()).collect(), Vec::new());
    report.set_split(Split::CrossVal, t.experiment.cross_validate(&t.output.models()), Vec::new());

    let per_posture = report.rows.iter().filter(|r| r.posture != ALL_POSTURES).count();
    assert_eq!(per_posture, 2 * 2 * 2);
    assert_eq!(report.rows.len(), per_posture + 2 * 2);
    assert_eq!(report.reaggregated(), report);

    for row in &report.rows {
        let values: Vec<f64> = row.trials.iter().map(|t| t.rmse.q).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let q = row.q.unwrap();
        assert!((q.mean - mean).abs() < 1e-12 && (q.std - var.sqrt()).abs() < 1e-12);
        assert!(row.trials.iter().all(|t| t.rmse.q1 >= 0.0 && t.rmse.q2 >= 0.0));
    }
    for split in [Split::Train, Split::CrossVal] {
        for sections in [1, 2] {
            let pooled: Vec<_> = report
                .rows
                .iter()
                .filter(|r| r.split == split && r.sections == sections && r.posture != ALL_POSTURES)
                .flat_map(|r| r.trials.iter().map(|t| t.rmse.q1))
                .collect();
            let all = report.row(ALL_POSTURES, sections, split).unwrap();
            assert_eq!(all.q1, MeanStd::of(&pooled));
        }
    }
}

#[test]
fn iscv_on_the_held_out_trials_matches_cross_validation() {
    let t = trained();
    let models = t.output.models();
    let mut held_out = Dataset::default();
    held_out.subjects.insert("A".into(), *t.experiment.params());
    for m in models.iter().filter(|m| m.sections == 1) {
        for d in t.experiment.dataset.trials("A", m.posture) {
            if m.split.test.contains(&d.meta.trial) {
                held_out.demos.push(d.clone());
            }
        }
    }
    let (iscv, skipped) = t.experiment.iscv(&models, &held_out, "A").unwrap();
    assert!(skipped.is_empty());
    let cv = t.experiment.cross_validate(&models);
    assert_eq!(iscv.len(), cv.len());
    for (a, b) in iscv.iter().zip(&cv) {
        assert_eq!(a.split, Split::Iscv);
        assert_eq!((a.trials.clone(), a.q1, a.q2, a.q), (b.trials.clone(), b.q1, b.q2, b.q));
    }
}

#[test]
fn iscv_skips_postures_the_other_subject_lacks() {
    let t = trained();
    let mut other = t.experiment.dataset.clone();
    other.demos.retain(|d| !(d.meta.subject == "B" && d.meta.posture == Posture::P5));
    let models = t.output.models();
    let (rows, skipped) = t.experiment.iscv(&models, &other, "B").unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.posture == "P3" && r.n_trials + r.failed.len() == 4));
    assert_eq!(skipped.len(), 2);
    assert!(skipped.iter().all(|s| s.contains("P5")));
    assert!(t.experiment.iscv(&models, &other, "nobody").is_err());
}

#[test]
fn failing_trials_are_excluded_and_flagged() {
    let t = trained();
    let model = &t.output.runs[0].model;
    let good = t.experiment.dataset.trials("A", model.posture)[0].clone();
    let short = RawDemo::new(
        TrialMeta {
            subject: "A".into(),
            posture: model.posture,
            trial: 99,
            target_x: Some(0.3),
        },
        (0..12).map(|k| k as f64 * 0.002).collect(),
        vec![good.q[0]; 12],
    )
    .unwrap();
    let row = t
        .experiment
        .evaluate(model, &[&good, &short], t.experiment.params(), Split::CrossVal);
    assert_eq!(row.n_trials, 1);
    assert_eq!(row.failed.len(), 1);
    assert_eq!(row.failed[0].trial, 99);
}

#[test]
fn identical_noiseless_trials_give_equal_train_and_held_out_rmse() {
    let (dataset, _) = generate(&tiny_generate(Noise::default())).unwrap();
    let config = ExperimentConfig {
        postures: Some(vec![Posture::P3]),
        sections: vec![2],
        ..tiny_experiment_config()
    };
    let experiment = Experiment::new(config, dataset).unwrap();
    let out = experiment.train();
    let train = &out.runs[0].train_row;
    let cv = &experiment.cross_validate(&out.models())[0];
    assert_eq!(train.n_trials, 2);
    assert_eq!(cv.n_trials, 2);
    assert_eq!(train.q.unwrap().mean, cv.q.unwrap().mean);
}

#[test]
fn too_few_trials_is_reported_and_other_postures_still_run() {
    let (mut dataset, _) = generate(&tiny_generate(Noise::default())).unwrap();
    dataset.demos.retain(|d| !(d.meta.posture == Posture::P5 && d.meta.trial > 0));
    let config = ExperimentConfig {
        sections: vec![1],
        ..tiny_experiment_config()
    };
    let out = Experiment::new(config, dataset).unwrap().train();
    assert_eq!(out.runs.len(), 1);
    assert_eq!(out.runs[0].model.posture, Posture::P3);
    assert!(out.diagnostics.iter().any(|d| d.contains("P5") && d.contains("training failed")));
}

fn with_weights(model: &TrainedModel, weights: WeightMatrix) -> TrainedModel {
    TrainedModel {
        weights,
        ..model.clone()
    }
}

#[test]
fn normalized_weights_follow_column_sums() {
    let base = &trained().output.runs[1].model;
    let uniform = with_weights(base, WeightMatrix::uniform(2, 0.05));
    for row in normalized_weights(&[uniform]) {
        assert!((row.normalized - 1.0 / N_FEATURES as f64).abs() < 1e-15);
        assert_eq!(row.raw, 0.05);
    }

    let mut column = [0.07 / 6.0; N_FEATURES];
    column[Feature::Energy.index()] = 0.93;
    let dominant = with_weights(base, WeightMatrix::constant(2, column).unwrap());
    let table = normalized_weights(&[dominant]);
    let energy: Vec<f64> = table.iter().filter(|r| r.feature == "energy").map(|r| r.normalized).collect();
    assert_eq!(energy.len(), 2);
    assert!(energy.iter().all(|v| (v - 0.93).abs() < 1e-12));

    let learned = normalized_weights(&trained().output.models());
    for chunk in learned.chunks(N_FEATURES) {
        let sum: f64 = chunk.iter().map(|r| r.normalized).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn persisted_models_and_reports_round_trip() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    save_runs(&t.output.runs, dir.path()).unwrap();
    let loaded = load_models(dir.path()).unwrap();
    assert_eq!(loaded, t.output.models());
    assert!(dir.path().join("history_P3_2.json").exists());

    let table = export_weights(&loaded, dir.path(), true).unwrap();
    let csv = fs::read_to_string(dir.path().join(NORMALIZED_CSV)).unwrap();
    assert_eq!(csv.lines().count(), table.len() + 1);
    assert_eq!(table.len(), N_FEATURES * (1 + 2) * 2);
    assert_eq!(load_models(dir.path()).unwrap().len(), loaded.len());

    let mut report = RmseReport::default();
    report.set_split(Split::Train, t.output.runs.iter().map(|r| r.train_row.clone()).collect(), vec!["note".into()]);
    write_report(&report, dir.path()).unwrap();
    assert_eq!(read_report(dir.path()).unwrap(), report);
    report.set_split(Split::Train, Vec::new(), Vec::new());
    assert!(report.rows.is_empty() && report.diagnostics.is_empty());
}

#[test]
fn config_files_fill_defaults_and_resolve_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("experiment.json");
    fs::write(&path, r#"{"dataset": "data/set.json", "sections": [6], "moirl": {"beta": 0.001}}"#).unwrap();
    let config = ExperimentConfig::from_file(&path).unwrap();
    assert_eq!(config.dataset, dir.path().join("data/set.json"));
    assert_eq!(config.output, dir.path().join("results"));
    assert_eq!(config.sections, vec![6]);
    assert_eq!(config.train_count, 10);
    assert_eq!(config.moirl.beta, 0.001);
    assert_eq!(config.moirl.max_line_trials, 10);
    assert!(ExperimentConfig {
        sections: vec![0],
        ..ExperimentConfig::default()
    }
    .validate()
    .is_err());
}
