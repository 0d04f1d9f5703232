//! Experiment harness: deterministic train/test splits, weight learning per
//! posture and section count, held-out and inter-subject evaluation, and
//! persisted reports.

mod generate;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::ArmParams;
use crate::data::{
    final_hand_x, load_dataset, make_layout, preprocess, Dataset, Format, Grid, LoadOptions, Posture, PreprocessConfig,
    RawDemo,
};
use crate::doc::{solve_doc, ReachTask, WeightMatrix};
use crate::error::{Error, Result};
use crate::features::{Trajectory, FEATURE_NAMES};
use crate::moirl::{run_moirl, DemoSet, LearnResult, MoirlConfig, StopReason};

pub use generate::{generate, phased_weights, GenerateConfig, GeneratedSubject, PostureStart, SubjectSpec};
pub use report::{
    joint_rmse, Diagnostic, FailedTrial, JointRmse, MeanStd, ReportRow, RmseReport, Split, TrialRmse, ALL_POSTURES,
};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const NORMALIZED_CSV: &str = "weights_normalized.csv";
pub const NORMALIZED_JSON: &str = "weights_normalized.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Inferred from the dataset path when absent.
    pub format: Option<Format>,
    /// Training subject; the first subject id when absent.
    pub subject: Option<String>,
    /// Postures to run; every posture of the subject when absent.
    pub postures: Option<Vec<Posture>>,
    pub sections: Vec<usize>,
    /// Trials per posture used for learning; the rest are held out.
    pub train_count: usize,
    pub seed: u64,
    /// Optimization grid step (s).
    pub dt: f64,
    pub preprocess: PreprocessConfig,
    pub moirl: MoirlConfig,
    pub output: PathBuf,
    /// Dataset for inter-subject validation; the training dataset when absent.
    pub iscv_dataset: Option<PathBuf>,
    /// Subject evaluated by inter-subject validation; the first other subject when absent.
    pub iscv_subject: Option<String>,
    /// Fail on the first invalid dataset record instead of skipping it.
    pub strict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("dataset.json"),
            format: None,
            subject: None,
            postures: None,
            sections: vec![1, 6, 8],
            train_count: 10,
            seed: 0,
            dt: 0.01,
            preprocess: PreprocessConfig::default(),
            moirl: MoirlConfig::default(),
            output: PathBuf::from("results"),
            iscv_dataset: None,
            iscv_subject: None,
            strict: false,
        }
    }
}

impl ExperimentConfig {
    /// Read a JSON config; relative paths in it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset);
        resolve(&mut config.output);
        if let Some(p) = config.iscv_dataset.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() || self.sections.contains(&0) {
            return Err(Error::Contract("section counts must be a nonempty list of positive integers".into()));
        }
        if self.train_count == 0 {
            return Err(Error::Contract("train_count must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Contract(format!("dt must be positive, got {}", self.dt)));
        }
        self.moirl.validate()
    }

    fn load(&self, path: &Path) -> Result<Dataset> {
        let format = self.format.unwrap_or_else(|| Format::infer(path));
        let loaded = load_dataset(path, format, LoadOptions { strict: self.strict })?;
        for issue in &loaded.issues {
            warn!("{issue}");
        }
        Ok(loaded.dataset)
    }
}

/// Trial indices of one posture split into learning and held-out sets, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSplit {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

/// Shuffle with a stream derived from `(seed, posture)` and take the first `train_count`.
pub fn split_trials(seed: u64, posture: Posture, trials: &[u32], train_count: usize) -> Result<TrialSplit> {
    if trials.len() < train_count {
        return Err(Error::Contract(format!(
            "posture {posture} has {} trials, {train_count} needed for training",
            trials.len()
        )));
    }
    let mut order = trials.to_vec();
    order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(posture as u64 + 1);
    order.shuffle(&mut rng);
    let mut train = order[..train_count].to_vec();
    let mut test = order[train_count..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(TrialSplit { train, test })
}

/// Learned weights for one posture and section count with what is needed to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub subject: String,
    pub posture: Posture,
    pub sections: usize,
    pub weights: WeightMatrix,
    pub grid: Grid,
    /// Hand target used when a trial does not record one.
    pub target_x: f64,
    pub split: TrialSplit,
    /// Training trials dropped during preprocessing.
    pub excluded: Vec<FailedTrial>,
    pub stop_reason: StopReason,
    pub seed_merit: f64,
    pub merit: f64,
    pub accepted_iterations: usize,
    pub doc_solves: usize,
}

impl TrainedModel {
    pub fn key(&self) -> (Posture, usize) {
        (self.posture, self.sections)
    }

    pub fn file_name(&self) -> String {
        format!("weights_{}_{}.json", self.posture, self.sections)
    }

    pub fn history_file_name(&self) -> String {
        format!("history_{}_{}.json", self.posture, self.sections)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: TrainedModel,
    pub result: LearnResult,
    pub train_row: ReportRow,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub runs: Vec<TrainedRun>,
    /// Runs that produced no model, and runs with no accepted iteration.
    pub diagnostics: Vec<String>,
}

impl TrainOutput {
    pub fn models(&self) -> Vec<TrainedModel> {
        self.runs.iter().map(|r| r.model.clone()).collect()
    }
}

/// A dataset bound to a config and a training subject.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub subject: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let subject = match &config.subject {
            Some(s) if dataset.params(s).is_some() => s.clone(),
            Some(s) => return Err(Error::Contract(format!("subject {s:?} is not in the dataset"))),
            None => dataset
                .subject_ids()
                .first()
                .map(|s| s.to_string())
                .ok_or_else(|| Error::Contract("dataset has no subjects".into()))?,
        };
        Ok(Experiment {
            config,
            dataset,
            subject,
        })
    }

    pub fn load(config: ExperimentConfig) -> Result<Self> {
        let dataset = config.load(&config.dataset)?;
        Experiment::new(config, dataset)
    }

    pub fn params(&self) -> &ArmParams {
        &self.dataset.subjects[&self.subject]
    }

    /// Requested postures that the training subject has.
    pub fn postures(&self) -> Vec<Posture> {
        let available: Vec<Posture> = self
            .dataset
            .postures()
            .into_iter()
            .filter(|p| !self.dataset.trials(&self.subject, *p).is_empty())
            .collect();
        match &self.config.postures {
            Some(wanted) => available.into_iter().filter(|p| wanted.contains(p)).collect(),
            None => available,
        }
    }

    pub fn split(&self, posture: Posture) -> Result<TrialSplit> {
        let ids: Vec<u32> = self
            .dataset
            .trials(&self.subject, posture)
            .iter()
            .map(|d| d.meta.trial)
            .collect();
        split_trials(self.config.seed, posture, &ids, self.config.train_count)
    }

    fn trials(&self, posture: Posture, ids: &[u32]) -> Vec<&RawDemo> {
        self.dataset
            .trials(&self.subject, posture)
            .into_iter()
            .filter(|d| ids.contains(&d.meta.trial))
            .collect()
    }

    /// Learn weights for every requested `(posture, sections)` pair.
    ///
    /// A run that fails is reported in the diagnostics and does not stop the others.
    pub fn train(&self) -> TrainOutput {
        let keys: Vec<(Posture, usize)> = self
            .postures()
            .into_iter()
            .flat_map(|p| self.config.sections.iter().map(move |&s| (p, s)))
            .collect();
        let outcomes: Vec<Result<TrainedRun>> = keys.par_iter().map(|&(p, s)| self.train_one(p, s)).collect();
        let mut out = TrainOutput::default();
        for ((posture, sections), outcome) in keys.into_iter().zip(outcomes) {
            match outcome {
                Ok(run) => {
                    if run.model.accepted_iterations == 0 {
                        out.diagnostics.push(format!(
                            "posture {posture}, {sections} sections: no accepted iteration ({:?}); initial weights kept",
                            run.model.stop_reason
                        ));
                    }
                    out.runs.push(run);
                }
                Err(e) => out
                    .diagnostics
                    .push(format!("posture {posture}, {sections} sections: training failed: {e}")),
            }
        }
        out
    }

    pub fn train_one(&self, posture: Posture, sections: usize) -> Result<TrainedRun> {
        let split = self.split(posture)?;
        let raws = self.trials(posture, &split.train);
        let params = *self.params();
        let horizon = raws.iter().map(|d| d.duration()).sum::<f64>() / raws.len() as f64;
        let grid = make_layout(horizon, sections, self.config.dt)?;

        let mut kept = Vec::new();
        let mut trajectories = Vec::new();
        let mut excluded = Vec::new();
        for raw in &raws {
            match preprocess(raw, &params, &grid, &self.config.preprocess) {
                Ok(traj) => {
                    trajectories.push(traj);
                    kept.push(*raw);
                }
                Err(e) => excluded.push(failed(raw, &e)),
            }
        }
        if trajectories.is_empty() {
            return Err(Error::Contract(format!("no usable training trial for posture {posture}")));
        }
        let q0 = trajectories.iter().map(|t| t.initial().q).sum::<Vector2<f64>>() / trajectories.len() as f64;
        let target_x = model_target(&kept, &params);
        let demos = DemoSet::new(trajectories, grid.layout, &params)?;
        let template = ReachTask::new(params, q0, target_x, grid.horizon(), grid.layout);
        let result = run_moirl(&demos, &template, &self.config.moirl)?;
        info!(
            "posture {posture}, {sections} sections: {:?} after {} accepted iterations, merit {:e} -> {:e}",
            result.stop_reason,
            result.history.len(),
            result.seed_merit,
            result.merit
        );
        let model = TrainedModel {
            subject: self.subject.clone(),
            posture,
            sections,
            weights: result.weights.clone(),
            grid,
            target_x,
            split,
            excluded,
            stop_reason: result.stop_reason,
            seed_merit: result.seed_merit,
            merit: result.merit,
            accepted_iterations: result.history.len(),
            doc_solves: result.doc_solves,
        };
        let mut train_row = self.evaluate(&model, &kept, &params, Split::Train);
        train_row.failed.extend(model.excluded.iter().cloned());
        Ok(TrainedRun {
            model,
            result,
            train_row,
        })
    }

    /// Predict each trial from its own initial posture and compare.
    pub fn evaluate(&self, model: &TrainedModel, trials: &[&RawDemo], params: &ArmParams, split: Split) -> ReportRow {
        let outcomes: Vec<Result<TrialRmse>> = trials
            .par_iter()
            .map(|raw| predict_trial(model, raw, params, &self.config))
            .collect();
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for (raw, outcome) in trials.iter().zip(outcomes) {
            match outcome {
                Ok(r) => rows.push(r),
                Err(e) => {
                    warn!("{split} trial {} of {}: {e}", raw.meta.trial, raw.meta.subject);
                    failures.push(failed(raw, &e));
                }
            }
        }
        ReportRow::from_trials(model.posture.to_string(), model.sections, split, rows, failures)
    }

    /// Held-out trials of the training subject.
    pub fn cross_validate(&self, models: &[TrainedModel]) -> Vec<ReportRow> {
        models
            .par_iter()
            .map(|m| {
                let trials = self.trials(m.posture, &m.split.test);
                self.evaluate(m, &trials, self.params(), Split::CrossVal)
            })
            .collect()
    }

    /// Every trial of `subject` in `other` for each model's posture, predicted
    /// with that subject's arm parameters. Postures the subject lacks are
    /// skipped with a diagnostic.
    pub fn iscv(&self, models: &[TrainedModel], other: &Dataset, subject: &str) -> Result<(Vec<ReportRow>, Vec<String>)> {
        let params = other
            .params(subject)
            .ok_or_else(|| Error::Contract(format!("subject {subject:?} is not in the validation dataset")))?;
        let mut skipped = Vec::new();
        let mut present = Vec::new();
        for m in models {
            let trials = other.trials(subject, m.posture);
            if trials.is_empty() {
                skipped.push(format!(
                    "iscv posture {}, {} sections: subject {subject:?} has no trials",
                    m.posture, m.sections
                ));
            } else {
                present.push((m, trials));
            }
        }
        let rows = present
            .par_iter()
            .map(|(m, trials)| self.evaluate(m, trials, params, Split::Iscv))
            .collect();
        Ok((rows, skipped))
    }

    /// Dataset and subject for inter-subject validation from the config.
    pub fn iscv_target(&self) -> Result<(Dataset, String)> {
        let other = match &self.config.iscv_dataset {
            Some(path) => self.config.load(path)?,
            None => self.dataset.clone(),
        };
        let subject = match &self.config.iscv_subject {
            Some(s) => s.clone(),
            None => other
                .subject_ids()
                .into_iter()
                .find(|s| *s != self.subject)
                .map(str::to_owned)
                .ok_or_else(|| Error::Contract("no subject other than the training subject for iscv".into()))?,
        };
        Ok((other, subject))
    }
}

fn failed(raw: &RawDemo, e: &Error) -> FailedTrial {
    FailedTrial {
        subject: raw.meta.subject.clone(),
        trial: raw.meta.trial,
        reason: e.to_string(),
    }
}

/// Mean recorded target, or the mean final hand position if any trial lacks one.
fn model_target(trials: &[&RawDemo], params: &ArmParams) -> f64 {
    let recorded: Option<Vec<f64>> = trials.iter().map(|d| d.meta.target_x).collect();
    let xs = recorded.unwrap_or_else(|| trials.iter().map(|d| final_hand_x(d, params)).collect());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// DOC prediction for one trial on the model grid and its RMSE against the measurement.
pub fn predict(model: &TrainedModel, raw: &RawDemo, params: &ArmParams, config: &ExperimentConfig) -> Result<(Trajectory, Trajectory)> {
    let measured = preprocess(raw, params, &model.grid, &config.preprocess)?;
    let target = raw.meta.target_x.unwrap_or(model.target_x);
    let task = ReachTask::new(*params, measured.initial().q, target, model.grid.horizon(), model.grid.layout);
    let solution = solve_doc(&task.with_weights(model.weights.clone()), &config.moirl.doc, None)?;
    if !solution.converged {
        return Err(Error::DocFailed(format!(
            "prediction did not converge (constraint violation {:e})",
            solution.constraint_violation
        )));
    }
    Ok((solution.trajectory, measured))
}

fn predict_trial(model: &TrainedModel, raw: &RawDemo, params: &ArmParams, config: &ExperimentConfig) -> Result<TrialRmse> {
    let (predicted, measured) = predict(model, raw, params, config)?;
    Ok(TrialRmse {
        subject: raw.meta.subject.clone(),
        posture: raw.meta.posture.to_string(),
        trial: raw.meta.trial,
        rmse: joint_rmse(&predicted, &measured)?,
    })
}

/// Write each model and its learning history into `dir`.
pub fn save_runs(runs: &[TrainedRun], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in runs {
        fs::write(dir.join(run.model.file_name()), serde_json::to_string_pretty(&run.model)?)?;
        fs::write(dir.join(run.model.history_file_name()), serde_json::to_string_pretty(&run.result)?)?;
    }
    Ok(())
}

/// Every `weights_<posture>_<sections>.json` in `dir`, ordered by key.
pub fn load_models(dir: &Path) -> Result<Vec<TrainedModel>> {
    let mut models = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("weights_") && name.ends_with(".json") && name != NORMALIZED_JSON {
            let model: TrainedModel = serde_json::from_str(&fs::read_to_string(&path)?)?;
            model.weights.validate()?;
            models.push(model);
        }
    }
    models.sort_by_key(TrainedModel::key);
    Ok(models)
}

/// One row per (posture, sections, window, feature) with raw and column-normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedWeight {
    pub posture: Posture,
    pub sections: usize,
    pub window: usize,
    pub feature: String,
    pub raw: f64,
    pub normalized: f64,
}

pub fn normalized_weights(models: &[TrainedModel]) -> Vec<NormalizedWeight> {
    let mut out = Vec::new();
    for m in models {
        let normalized = m.weights.normalized_columns();
        for (window, (raw, norm)) in m.weights.columns().iter().zip(&normalized).enumerate() {
            for (k, name) in FEATURE_NAMES.iter().enumerate() {
                out.push(NormalizedWeight {
                    posture: m.posture,
                    sections: m.sections,
                    window,
                    feature: (*name).to_owned(),
                    raw: raw[k],
                    normalized: norm[k],
                });
            }
        }
    }
    out
}

/// Write `weights_normalized.csv` and, if asked, `weights_normalized.json` into `dir`.
pub fn export_weights(models: &[TrainedModel], dir: &Path, json: bool) -> Result<Vec<NormalizedWeight>> {
    fs::create_dir_all(dir)?;
    let table = normalized_weights(models);
    let mut w = csv::Writer::from_path(dir.join(NORMALIZED_CSV))?;
    w.write_record(["posture", "sections", "window", "feature", "raw", "normalized"])?;
    for row in &table {
        w.write_record([
            row.posture.to_string(),
            row.sections.to_string(),
            row.window.to_string(),
            row.feature.clone(),
            format!("{:e}", row.raw),
            format!("{:.12}", row.normalized),
        ])?;
    }
    w.flush()?;
    if json {
        fs::write(dir.join(NORMALIZED_JSON), serde_json::to_string_pretty(&table)?)?;
    }
    Ok(table)
}

/// The report in `dir`, or an empty one.
pub fn read_report(dir: &Path) -> Result<RmseReport> {
    let path = dir.join(REPORT_JSON);
    if path.exists() {
        RmseReport::read_json(&path)
    } else {
        Ok(RmseReport::default())
    }
}

pub fn write_report(report: &RmseReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.write_json(&dir.join(REPORT_JSON))?;
    report.write_csv(&dir.join(REPORT_CSV))
}
