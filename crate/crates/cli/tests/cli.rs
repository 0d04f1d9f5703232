use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use reach_irl::data::{Noise, Posture};
use reach_irl::doc::WeightMatrix;
use reach_irl::eval::{ExperimentConfig, GenerateConfig, PostureStart, RmseReport, Split};
use reach_irl::features::Feature;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reach-irl"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_configs(dir: &Path) {
    let mut weights = WeightMatrix::uniform(2, 0.01);
    weights.set(Feature::JointTorque.index(), 0, 1.0);
    weights.set(Feature::JointAcceleration.index(), 1, 1.0);
    let gen = GenerateConfig {
        postures: vec![PostureStart {
            posture: Posture::P3,
            q0_deg: [50.0, 80.0],
        }],
        target_x: 0.3,
        horizon: 0.4,
        dt: 0.02,
        trials: 4,
        weights,
        noise: Noise {
            q0_sigma: 0.02,
            duration_sigma: 0.01,
        },
        ..GenerateConfig::default()
    };
    fs::write(dir.join("generate.json"), serde_json::to_string_pretty(&gen).unwrap()).unwrap();
    let exp = ExperimentConfig {
        dataset: "data/dataset.json".into(),
        subject: Some("A".into()),
        sections: vec![1, 2],
        train_count: 2,
        dt: 0.02,
        output: "results".into(),
        ..ExperimentConfig::default()
    };
    fs::write(dir.join("experiment.json"), serde_json::to_string_pretty(&exp).unwrap()).unwrap();
}

#[test]
fn full_pipeline_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_configs(dir);

    ok(&cli(&["generate", "--config", "generate.json", "--output", "data"], dir));
    assert!(dir.join("data/dataset.json").exists());
    assert!(dir.join("data/ground_truth.json").exists());

    ok(&cli(&["train", "--config", "experiment.json"], dir));
    for name in ["weights_P3_1.json", "weights_P3_2.json", "history_P3_1.json", "history_P3_2.json", "report.json", "report.csv"] {
        assert!(dir.join("results").join(name).exists(), "missing {name}");
    }
    ok(&cli(&["crossval", "--config", "experiment.json"], dir));
    ok(&cli(&["iscv", "--config", "experiment.json"], dir));
    let report = cli(&["report", "--output", "results"], dir);
    ok(&report);
    let stdout = String::from_utf8_lossy(&report.stdout);
    assert!(stdout.contains("cross-val") && stdout.contains("iscv"));

    let parsed: RmseReport = serde_json::from_str(&fs::read_to_string(dir.join("results/report.json")).unwrap()).unwrap();
    for split in [Split::Train, Split::CrossVal, Split::Iscv] {
        for sections in [1, 2] {
            assert!(parsed.row("P3", sections, split).is_some(), "{split} {sections}");
            assert!(parsed.row("ALL", sections, split).is_some());
        }
    }
    let csv = fs::read_to_string(dir.join("results/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + parsed.rows.len());

    ok(&cli(&["export-weights", "--output", "results", "--json"], dir));
    assert!(dir.join("results/weights_normalized.csv").exists());
    assert!(dir.join("results/weights_normalized.json").exists());
}

#[test]
fn seed_and_sections_flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_configs(dir);
    ok(&cli(&["generate", "--config", "generate.json", "--output", "data", "--seed", "5"], dir));
    ok(&cli(&["train", "--config", "experiment.json", "--sections", "2", "--seed", "9", "--output", "other"], dir));
    assert!(dir.join("other/weights_P3_2.json").exists());
    assert!(!dir.join("other/weights_P3_1.json").exists());
}

#[test]
fn failures_exit_nonzero_with_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["train", "--config", "missing.json"], tmp.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.json"));

    let out = cli(&["report", "--output", "nothing"], tmp.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "cli");
}
