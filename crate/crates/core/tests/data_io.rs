use std::fs;

use nalgebra::Vector2;
use reach_irl::arm::{self, ArmParams, JointState};
use reach_irl::data::{
    generate_synthetic, load_dataset, make_layout, preprocess, raw_from_trajectory, save_dataset_json, save_trial_csv,
    Format, LoadOptions, Noise, Posture, PreprocessConfig, RawDemo, SyntheticSpec, TrialMeta,
};
use reach_irl::doc::{WeightMatrix, TERMINAL_TOLERANCE};
use reach_irl::features::{Feature, Trajectory};

fn meta(trial: u32) -> TrialMeta {
    TrialMeta {
        subject: "S1".into(),
        posture: Posture::P2,
        trial,
        target_x: Some(0.45),
    }
}

fn write_csv(dir: &std::path::Path, name: &str, rows: &[(f64, f64, f64)], sidecar: Option<&str>) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.csv"));
    let mut text = String::from("t,q1,q2\n");
    for (t, a, b) in rows {
        text.push_str(&format!("{t},{a},{b}\n"));
    }
    fs::write(&path, text).unwrap();
    if let Some(s) = sidecar {
        fs::write(path.with_extension("json"), s).unwrap();
    }
    path
}

fn smooth_rows(n: usize) -> Vec<(f64, f64, f64)> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.01;
            (t, 1.0 + 0.3 * t * t, 1.5 - 0.2 * t)
        })
        .collect()
}

const SIDECAR: &str = r#"{"subject": "S1", "posture": "P3", "trial": 4}"#;

#[test]
fn empty_files_give_empty_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "").unwrap();
    let loaded = load_dataset(&csv, Format::Csv, LoadOptions::default()).unwrap();
    assert!(loaded.dataset.is_empty() && loaded.issues.is_empty());

    let json = dir.path().join("empty.json");
    fs::write(&json, "  \n").unwrap();
    let loaded = load_dataset(&json, Format::Json, LoadOptions { strict: true }).unwrap();
    assert!(loaded.dataset.is_empty());
}

#[test]
fn one_csv_trial_loads_with_its_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "trial", &smooth_rows(100), Some(SIDECAR));
    let loaded = load_dataset(&path, Format::Csv, LoadOptions { strict: true }).unwrap();
    assert_eq!(loaded.dataset.len(), 1);
    let demo = &loaded.dataset.demos[0];
    assert_eq!(demo.meta.posture, Posture::P3);
    assert_eq!(demo.meta.trial, 4);
    assert_eq!(demo.t.len(), 100);
    assert!((demo.q[10][0] - (1.0 + 0.3 * 0.01)).abs() < 1e-15);
    assert!(loaded.dataset.params("S1").is_some());
}

#[test]
fn decreasing_time_rejects_the_trial_and_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = smooth_rows(50);
    rows[17].0 = rows[15].0;
    write_csv(dir.path(), "a_bad", &rows, Some(SIDECAR));
    write_csv(
        dir.path(),
        "b_good",
        &smooth_rows(50),
        Some(r#"{"subject": "S1", "posture": "P3", "trial": 5}"#),
    );
    let loaded = load_dataset(dir.path(), Format::Csv, LoadOptions::default()).unwrap();
    assert_eq!(loaded.dataset.len(), 1);
    assert_eq!(loaded.dataset.demos[0].meta.trial, 5);
    assert_eq!(loaded.issues.len(), 1);
    // sample 17 sits on file line 19, after the header
    assert_eq!(loaded.issues[0].row, Some(19));
    assert!(loaded.issues[0].to_string().contains("row 19"));

    assert!(load_dataset(dir.path(), Format::Csv, LoadOptions { strict: true }).is_err());
}

#[test]
fn malformed_values_and_missing_metadata_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), "nometa", &smooth_rows(20), None);
    let loaded = load_dataset(&path, Format::Csv, LoadOptions::default()).unwrap();
    assert!(loaded.dataset.is_empty());
    assert!(loaded.issues[0].message.contains("metadata"));

    let path = dir.path().join("garbled.csv");
    let mut text = String::from("t,q1,q2\n");
    for (k, (t, a, b)) in smooth_rows(20).into_iter().enumerate() {
        if k == 3 {
            text.push_str(&format!("{t},abc,{b}\n"));
        } else {
            text.push_str(&format!("{t},{a},{b}\n"));
        }
    }
    fs::write(&path, text).unwrap();
    fs::write(path.with_extension("json"), SIDECAR).unwrap();
    let loaded = load_dataset(&path, Format::Csv, LoadOptions::default()).unwrap();
    assert_eq!(loaded.issues[0].row, Some(5));
    assert_eq!(loaded.issues[0].field.as_deref(), Some("q1"));
}

#[test]
fn json_loading_skips_only_invalid_trials() {
    let dir = tempfile::tempdir().unwrap();
    let t: Vec<f64> = (0..30).map(|k| k as f64 * 0.01).collect();
    let q: Vec<f64> = t.iter().map(|v| 1.0 + v).collect();
    let doc = serde_json::json!({
        "subjects": [{
            "id": "A",
            "arm_params": ArmParams::default(),
            "trials": [
                {"posture": "P1", "trial": 0, "t": t, "q1": q, "q2": q},
                {"posture": "P1", "trial": 1, "t": t[..5].to_vec(), "q1": q[..5].to_vec(), "q2": q[..5].to_vec()},
                {"posture": "P9", "trial": 2, "t": t, "q1": q, "q2": q},
                {"posture": "P1", "trial": 0, "t": t, "q1": q, "q2": q}
            ]
        }]
    });
    let path = dir.path().join("data.json");
    fs::write(&path, doc.to_string()).unwrap();
    let loaded = load_dataset(&path, Format::Json, LoadOptions::default()).unwrap();
    assert_eq!(loaded.dataset.len(), 1);
    assert_eq!(loaded.issues.len(), 3);
}

#[test]
fn saved_datasets_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, _) = generate_synthetic(&spec(3, Noise { q0_sigma: 0.02, duration_sigma: 0.02 }, 11)).unwrap();
    let path = dir.path().join("synthetic.json");
    save_dataset_json(&dataset, &path).unwrap();
    let loaded = load_dataset(&path, Format::Json, LoadOptions { strict: true }).unwrap();
    assert_eq!(loaded.dataset, dataset);

    let csv = dir.path().join("t0.csv");
    save_trial_csv(&dataset.demos[0], &dataset.subjects["S1"], &csv).unwrap();
    let loaded = load_dataset(&csv, Format::Csv, LoadOptions { strict: true }).unwrap();
    assert_eq!(loaded.dataset.demos[0], dataset.demos[0]);
}

fn raw_from(t: Vec<f64>, q: Vec<Vector2<f64>>) -> RawDemo {
    RawDemo::new(meta(0), t, q).unwrap()
}

#[test]
fn cubic_velocity_is_reconstructed() {
    let p = ArmParams::default();
    let cubic = |t: f64| Vector2::new(0.5 + 0.8 * t * t - 0.5 * t * t * t, 1.8 - 0.6 * t * t + 0.3 * t * t * t);
    let rate = |t: f64| Vector2::new(1.6 * t - 1.5 * t * t, -1.2 * t + 0.9 * t * t);
    let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
    let raw = raw_from(t.clone(), t.iter().map(|&v| cubic(v)).collect());
    let grid = make_layout(1.0, 1, 0.01).unwrap();
    let traj = preprocess(&raw, &p, &grid, &PreprocessConfig { cutoff_hz: None }).unwrap();
    for (s, &tk) in traj.states.iter().zip(&t) {
        assert!((s.dq - rate(tk)).amax() < 1e-3, "at {tk}: {} vs {}", s.dq, rate(tk));
    }
}

#[test]
fn constant_posture_needs_only_gravity_torque() {
    let p = ArmParams::default();
    let q = Vector2::new(0.9, 1.3);
    let t: Vec<f64> = (0..=60).map(|k| k as f64 * 0.01).collect();
    let raw = raw_from(t, vec![q; 61]);
    let grid = make_layout(0.6, 2, 0.01).unwrap();
    let traj = preprocess(&raw, &p, &grid, &PreprocessConfig::default()).unwrap();
    let hold = arm::gravity_torque(&p, &q);
    for s in &traj.states {
        assert!(s.dq.amax() < 1e-9);
    }
    for u in &traj.controls {
        assert!((u - hold).amax() < 1e-7);
    }
}

#[test]
fn resampling_on_the_matching_grid_is_the_identity() {
    let grid = make_layout(0.5, 1, 0.01).unwrap();
    let t: Vec<f64> = (0..=50).map(|k| k as f64 * 0.01).collect();
    let q: Vec<Vector2<f64>> = t.iter().map(|v| Vector2::new(v.sin(), (2.0 * v).cos())).collect();
    let raw = raw_from(t, q.clone());
    let traj = preprocess(&raw, &ArmParams::default(), &grid, &PreprocessConfig { cutoff_hz: None }).unwrap();
    for (s, orig) in traj.states.iter().zip(&q) {
        assert!((s.q - orig).amax() < 1e-12);
    }
}

#[test]
fn preprocessing_its_own_output_changes_nothing() {
    // unfiltered, since a second low-pass pass attenuates again
    let p = ArmParams::default();
    let grid = make_layout(0.8, 4, 0.01).unwrap();
    let t: Vec<f64> = (0..=97).map(|k| k as f64 * 0.0083).collect();
    let q: Vec<Vector2<f64>> = t.iter().map(|v| Vector2::new(0.4 + v * v, 1.6 - 0.5 * v.sin())).collect();
    let config = PreprocessConfig { cutoff_hz: None };
    let first = preprocess(&raw_from(t, q), &p, &grid, &config).unwrap();
    let again = preprocess(&raw_from_trajectory(&first, meta(0)), &p, &grid, &config).unwrap();
    for (a, b) in first.states.iter().zip(&again.states) {
        assert!((a.q - b.q).amax() < 1e-9);
    }
}

#[test]
fn reconstructed_torques_reproduce_the_motion() {
    let (dataset, _) = generate_synthetic(&spec(2, Noise::default(), 5)).unwrap();
    let p = dataset.subjects["S1"];
    let grid = make_layout(1.0, 2, 0.01).unwrap();
    for raw in &dataset.demos {
        let demo = preprocess(raw, &p, &grid, &PreprocessConfig::default()).unwrap();
        let rollout = Trajectory::rollout(&p, *demo.initial(), demo.controls.clone(), demo.dt).unwrap();
        let se: f64 = rollout
            .states
            .iter()
            .zip(&demo.states)
            .map(|(a, b)| (a.q - b.q).norm_squared())
            .sum();
        let rmse = (se / (2.0 * demo.n_samples() as f64)).sqrt().to_degrees();
        assert!(rmse < 1.0, "rollout RMSE {rmse} deg");
    }
}

#[test]
fn trials_shorter_than_the_filter_memory_are_rejected() {
    let t: Vec<f64> = (0..12).map(|k| k as f64 * 0.005).collect();
    let raw = raw_from(t, vec![Vector2::new(1.0, 1.0); 12]);
    let grid = make_layout(0.06, 1, 0.01).unwrap();
    assert!(preprocess(&raw, &ArmParams::default(), &grid, &PreprocessConfig::default()).is_err());
}

fn spec(trials: usize, noise: Noise, seed: u64) -> SyntheticSpec {
    let mut weights = WeightMatrix::uniform(2, 0.02);
    weights.set(Feature::JointTorque.index(), 0, 1.0);
    weights.set(Feature::JointAcceleration.index(), 1, 1.0);
    SyntheticSpec {
        subject: "S1".into(),
        posture: Posture::P2,
        params: ArmParams::default(),
        weights,
        q0: Vector2::new(60f64.to_radians(), 90f64.to_radians()),
        target_x: 0.45,
        horizon: 1.0,
        samples_per_window: 50,
        trials,
        noise,
        seed,
        doc: Default::default(),
    }
}

#[test]
fn noiseless_generation_repeats_one_demo() {
    let (dataset, truth) = generate_synthetic(&spec(3, Noise::default(), 1)).unwrap();
    assert_eq!(dataset.len(), 3);
    assert_eq!(dataset.demos[0].q, dataset.demos[1].q);
    assert_eq!(dataset.demos[1].q, dataset.demos[2].q);
    assert_eq!(truth.omega_true, spec(3, Noise::default(), 1).weights);
}

#[test]
fn jittered_demos_differ_but_reach_the_target() {
    let s = spec(4, Noise { q0_sigma: 0.02, duration_sigma: 0.0 }, 9);
    let (dataset, _) = generate_synthetic(&s).unwrap();
    assert_ne!(dataset.demos[0].q[0], dataset.demos[1].q[0]);
    for demo in &dataset.demos {
        let end = demo.q.last().unwrap();
        let x = arm::forward_kinematics(&s.params, end)[0];
        assert!((x - s.target_x).abs() <= TERMINAL_TOLERANCE);
        assert_eq!(JointState::at_rest(demo.q[0]).q, demo.q[0]);
    }
}

#[test]
fn same_seed_gives_identical_datasets() {
    let s = spec(3, Noise { q0_sigma: 0.02, duration_sigma: 0.03 }, 42);
    let a = generate_synthetic(&s).unwrap();
    let b = generate_synthetic(&s).unwrap();
    assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
    assert_eq!(a.1, b.1);
    let c = generate_synthetic(&SyntheticSpec { seed: 43, ..s }).unwrap();
    assert_ne!(a.0, c.0);
}
