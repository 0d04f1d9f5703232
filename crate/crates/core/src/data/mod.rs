//! Demonstration datasets: loading, preprocessing onto the optimization grid,
//! and synthetic generation.

mod filter;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::arm::{self, ArmParams, JointState};
use crate::error::{Error, Result};
use crate::features::{SectionLayout, Trajectory};

pub use filter::Biquad;
pub use synthetic::{generate_synthetic, GroundTruth, Noise, SyntheticSpec};

/// Minimum number of samples in a recorded trial.
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Posture {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl Posture {
    pub const ALL: [Posture; 5] = [Posture::P1, Posture::P2, Posture::P3, Posture::P4, Posture::P5];
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Posture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Posture::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Contract(format!("unknown posture label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub subject: String,
    pub posture: Posture,
    pub trial: u32,
    /// Horizontal hand target; when absent the final recorded hand position is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_x: Option<f64>,
}

/// One recorded trial of joint angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDemo {
    pub meta: TrialMeta,
    pub t: Vec<f64>,
    pub q: Vec<Vector2<f64>>,
}

/// A sample-level validation failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleIssue {
    pub sample: Option<usize>,
    pub message: String,
}

impl RawDemo {
    pub fn new(meta: TrialMeta, t: Vec<f64>, q: Vec<Vector2<f64>>) -> Result<Self> {
        check_samples(&t, &q).map_err(|e| Error::Contract(e.message))?;
        Ok(RawDemo { meta, t, q })
    }

    pub fn duration(&self) -> f64 {
        self.t[self.t.len() - 1] - self.t[0]
    }

    /// Mean sampling interval.
    pub fn mean_dt(&self) -> f64 {
        self.duration() / (self.t.len() - 1) as f64
    }

    pub fn key(&self) -> (String, Posture, u32) {
        (self.meta.subject.clone(), self.meta.posture, self.meta.trial)
    }
}

fn check_samples(t: &[f64], q: &[Vector2<f64>]) -> std::result::Result<(), SampleIssue> {
    if t.len() != q.len() {
        return Err(SampleIssue {
            sample: None,
            message: format!("{} time stamps for {} angle samples", t.len(), q.len()),
        });
    }
    if t.len() < MIN_SAMPLES {
        return Err(SampleIssue {
            sample: None,
            message: format!("{} samples, at least {MIN_SAMPLES} required", t.len()),
        });
    }
    for (k, (ti, qi)) in t.iter().zip(q).enumerate() {
        if !ti.is_finite() || !qi.iter().all(|v| v.is_finite()) {
            return Err(SampleIssue {
                sample: Some(k),
                message: "non-finite value".into(),
            });
        }
        if k > 0 && *ti <= t[k - 1] {
            return Err(SampleIssue {
                sample: Some(k),
                message: format!("time {ti} does not increase (previous {})", t[k - 1]),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Arm parameters per subject id.
    pub subjects: BTreeMap<String, ArmParams>,
    pub demos: Vec<RawDemo>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut keys = BTreeSet::new();
        for demo in &self.demos {
            if !self.subjects.contains_key(&demo.meta.subject) {
                return Err(Error::Contract(format!("no arm parameters for subject {:?}", demo.meta.subject)));
            }
            if !keys.insert(demo.key()) {
                return Err(Error::Contract(format!("duplicate trial {:?}", demo.key())));
            }
            check_samples(&demo.t, &demo.q).map_err(|e| Error::Contract(e.message))?;
        }
        Ok(())
    }

    pub fn params(&self, subject: &str) -> Option<&ArmParams> {
        self.subjects.get(subject)
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.keys().map(String::as_str).collect()
    }

    pub fn postures(&self) -> Vec<Posture> {
        let set: BTreeSet<Posture> = self.demos.iter().map(|d| d.meta.posture).collect();
        set.into_iter().collect()
    }

    /// Trials of one subject and posture, ordered by trial index.
    pub fn trials(&self, subject: &str, posture: Posture) -> Vec<&RawDemo> {
        let mut out: Vec<&RawDemo> = self
            .demos
            .iter()
            .filter(|d| d.meta.subject == subject && d.meta.posture == posture)
            .collect();
        out.sort_by_key(|d| d.meta.trial);
        out
    }

    /// Union of two datasets with disjoint trial keys.
    pub fn merge(mut self, other: Dataset) -> Result<Self> {
        for (id, params) in other.subjects {
            match self.subjects.get(&id) {
                Some(existing) if *existing != params => {
                    return Err(Error::Contract(format!("subject {id:?} has conflicting arm parameters")));
                }
                _ => {
                    self.subjects.insert(id, params);
                }
            }
        }
        self.demos.extend(other.demos);
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Contract(format!("unknown dataset format {s:?}"))),
        }
    }
}

impl Format {
    /// Guess from a path: directories and `.csv` files are CSV.
    pub fn infer(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Fail on the first invalid record instead of skipping it.
    pub strict: bool,
}

/// A rejected record or a warning raised while loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadIssue {
    pub record: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for LoadIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.record)?;
        if let Some(row) = self.row {
            write!(f, ", row {row}")?;
        }
        if let Some(field) = &self.field {
            write!(f, ", field {field}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub dataset: Dataset,
    pub issues: Vec<LoadIssue>,
}

/// Metadata sidecar of a CSV trial, stored next to it with a `.json` extension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub subject: String,
    pub posture: Posture,
    pub trial: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_params: Option<ArmParams>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonFile {
    #[serde(default)]
    subjects: Vec<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonSubject {
    id: String,
    arm_params: Option<ArmParams>,
    #[serde(default)]
    trials: Vec<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonTrial {
    posture: Posture,
    trial: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_x: Option<f64>,
    t: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
}

struct Collector {
    path: PathBuf,
    strict: bool,
    loaded: Loaded,
    keys: BTreeSet<(String, Posture, u32)>,
}

impl Collector {
    fn reject(&mut self, issue: LoadIssue) -> Result<()> {
        if self.strict {
            return Err(Error::Dataset {
                path: self.path.clone(),
                msg: issue.to_string(),
            });
        }
        warn!("skipping record: {issue}");
        self.loaded.issues.push(issue);
        Ok(())
    }

    fn subject(&mut self, id: &str, params: Option<ArmParams>) -> Result<()> {
        let params = match params {
            Some(p) => {
                if let Err(e) = p.validate() {
                    return self.reject(LoadIssue {
                        record: format!("subject {id}"),
                        row: None,
                        field: Some("arm_params".into()),
                        message: e.to_string(),
                    });
                }
                p
            }
            None => {
                if self.loaded.dataset.subjects.contains_key(id) {
                    return Ok(());
                }
                warn!("subject {id} has no arm parameters; using defaults");
                ArmParams::default()
            }
        };
        match self.loaded.dataset.subjects.get(id) {
            Some(existing) if *existing != params => self.reject(LoadIssue {
                record: format!("subject {id}"),
                row: None,
                field: Some("arm_params".into()),
                message: "conflicting arm parameters".into(),
            }),
            _ => {
                self.loaded.dataset.subjects.insert(id.to_owned(), params);
                Ok(())
            }
        }
    }

    fn trial(&mut self, record: String, meta: TrialMeta, t: Vec<f64>, q: Vec<Vector2<f64>>, row_offset: usize) -> Result<()> {
        if let Err(issue) = check_samples(&t, &q) {
            return self.reject(LoadIssue {
                record,
                row: issue.sample.map(|s| s + row_offset),
                field: None,
                message: issue.message,
            });
        }
        let demo = RawDemo { meta, t, q };
        if !self.keys.insert(demo.key()) {
            return self.reject(LoadIssue {
                record,
                row: None,
                field: None,
                message: "duplicate (subject, posture, trial) key".into(),
            });
        }
        self.loaded.dataset.demos.push(demo);
        Ok(())
    }
}

/// Load demonstrations from `path`.
///
/// CSV input is a single `t,q1,q2` file or a directory of them, each with a
/// `.json` metadata sidecar. JSON input holds
/// `{"subjects": [{"id", "arm_params", "trials": [{"posture", "trial", "t", "q1", "q2"}]}]}`.
pub fn load_dataset(path: &Path, format: Format, options: LoadOptions) -> Result<Loaded> {
    let mut collector = Collector {
        path: path.to_owned(),
        strict: options.strict,
        loaded: Loaded::default(),
        keys: BTreeSet::new(),
    };
    match format {
        Format::Json => load_json(path, &mut collector)?,
        Format::Csv => {
            if path.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(path)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
                    .collect();
                files.sort();
                for file in files {
                    load_csv_trial(&file, &mut collector)?;
                }
            } else {
                load_csv_trial(path, &mut collector)?;
            }
        }
    }
    if collector.loaded.dataset.is_empty() {
        warn!("no demonstrations loaded from {}", path.display());
    }
    Ok(collector.loaded)
}

fn load_json(path: &Path, collector: &mut Collector) -> Result<()> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        warn!("{} is empty", path.display());
        return Ok(());
    }
    let file: JsonFile = serde_json::from_str(&text).map_err(|e| Error::Dataset {
        path: path.to_owned(),
        msg: e.to_string(),
    })?;
    for (si, value) in file.subjects.into_iter().enumerate() {
        let subject: JsonSubject = match serde_json::from_value(value) {
            Ok(s) => s,
            Err(e) => {
                collector.reject(LoadIssue {
                    record: format!("subject #{si}"),
                    row: None,
                    field: None,
                    message: e.to_string(),
                })?;
                continue;
            }
        };
        collector.subject(&subject.id, subject.arm_params)?;
        if !collector.loaded.dataset.subjects.contains_key(&subject.id) {
            continue;
        }
        for (ti, value) in subject.trials.into_iter().enumerate() {
            let record = format!("subject {} trial #{ti}", subject.id);
            let trial: JsonTrial = match serde_json::from_value(value) {
                Ok(t) => t,
                Err(e) => {
                    collector.reject(LoadIssue {
                        record,
                        row: None,
                        field: None,
                        message: e.to_string(),
                    })?;
                    continue;
                }
            };
            if trial.q1.len() != trial.q2.len() {
                collector.reject(LoadIssue {
                    record,
                    row: None,
                    field: Some("q2".into()),
                    message: format!("{} q1 samples but {} q2 samples", trial.q1.len(), trial.q2.len()),
                })?;
                continue;
            }
            let q = trial.q1.iter().zip(&trial.q2).map(|(a, b)| Vector2::new(*a, *b)).collect();
            let meta = TrialMeta {
                subject: subject.id.clone(),
                posture: trial.posture,
                trial: trial.trial,
                target_x: trial.target_x,
            };
            collector.trial(record, meta, trial.t, q, 0)?;
        }
    }
    Ok(())
}

/// Sidecar path of a CSV trial.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn load_csv_trial(path: &Path, collector: &mut Collector) -> Result<()> {
    let record = path.display().to_string();
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        warn!("{} is empty", path.display());
        return Ok(());
    }
    let sidecar: Sidecar = match fs::read_to_string(sidecar_path(path)) {
        Ok(s) => match serde_json::from_str(&s) {
            Ok(meta) => meta,
            Err(e) => {
                return collector.reject(LoadIssue {
                    record,
                    row: None,
                    field: None,
                    message: format!("invalid metadata sidecar: {e}"),
                })
            }
        },
        Err(_) => {
            return collector.reject(LoadIssue {
                record,
                row: None,
                field: None,
                message: format!("missing metadata sidecar {}", sidecar_path(path).display()),
            })
        }
    };

    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ct), Some(c1), Some(c2)) = (column("t"), column("q1"), column("q2")) else {
        return collector.reject(LoadIssue {
            record,
            row: Some(1),
            field: None,
            message: format!("header must contain t,q1,q2, found {:?}", headers.iter().collect::<Vec<_>>()),
        });
    };

    let mut t = Vec::new();
    let mut q = Vec::new();
    // data rows are numbered from 2, after the header line
    for (k, row) in reader.records().enumerate() {
        let line = k + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                return collector.reject(LoadIssue {
                    record,
                    row: Some(line),
                    field: None,
                    message: e.to_string(),
                })
            }
        };
        let mut values = [0.0; 3];
        for (slot, (idx, name)) in values.iter_mut().zip([(ct, "t"), (c1, "q1"), (c2, "q2")]) {
            match row.get(idx).map(str::parse::<f64>) {
                Some(Ok(v)) => *slot = v,
                _ => {
                    return collector.reject(LoadIssue {
                        record,
                        row: Some(line),
                        field: Some(name.into()),
                        message: format!("not a number: {:?}", row.get(idx).unwrap_or("")),
                    })
                }
            }
        }
        t.push(values[0]);
        q.push(Vector2::new(values[1], values[2]));
    }

    collector.subject(&sidecar.subject, sidecar.arm_params)?;
    let meta = TrialMeta {
        subject: sidecar.subject,
        posture: sidecar.posture,
        trial: sidecar.trial,
        target_x: sidecar.target_x,
    };
    collector.trial(record, meta, t, q, 2)
}

/// Write `dataset` in the JSON format read by [`load_dataset`].
pub fn save_dataset_json(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut subjects = Vec::new();
    for (id, params) in &dataset.subjects {
        let mut demos: Vec<&RawDemo> = dataset.demos.iter().filter(|d| &d.meta.subject == id).collect();
        demos.sort_by_key(|d| (d.meta.posture, d.meta.trial));
        let trials = demos
            .into_iter()
            .map(|d| {
                serde_json::to_value(JsonTrial {
                    posture: d.meta.posture,
                    trial: d.meta.trial,
                    target_x: d.meta.target_x,
                    t: d.t.clone(),
                    q1: d.q.iter().map(|v| v[0]).collect(),
                    q2: d.q.iter().map(|v| v[1]).collect(),
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        subjects.push(serde_json::to_value(JsonSubject {
            id: id.clone(),
            arm_params: Some(*params),
            trials,
        })?);
    }
    fs::write(path, serde_json::to_string_pretty(&JsonFile { subjects })?)?;
    Ok(())
}

/// Write one trial as `t,q1,q2` CSV plus its metadata sidecar.
pub fn save_trial_csv(demo: &RawDemo, params: &ArmParams, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["t", "q1", "q2"])?;
    for (t, q) in demo.t.iter().zip(&demo.q) {
        writer.write_record([t.to_string(), q[0].to_string(), q[1].to_string()])?;
    }
    writer.flush()?;
    let sidecar = Sidecar {
        subject: demo.meta.subject.clone(),
        posture: demo.meta.posture,
        trial: demo.meta.trial,
        target_x: demo.meta.target_x,
        arm_params: Some(*params),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Uniform optimization grid: `layout.n_controls()` steps of `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub layout: SectionLayout,
    pub dt: f64,
}

impl Grid {
    pub fn n_steps(&self) -> usize {
        self.layout.n_controls()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps() as f64
    }
}

/// `N_w` windows of `round(T / (dt N_w))` samples each.
pub fn make_layout(horizon: f64, n_windows: usize, dt: f64) -> Result<Grid> {
    if !(horizon > 0.0) || !(dt > 0.0) || n_windows == 0 {
        return Err(Error::Contract(format!(
            "layout needs T > 0, dt > 0 and at least one window (T = {horizon}, dt = {dt}, N_w = {n_windows})"
        )));
    }
    let per_window = (horizon / (dt * n_windows as f64)).round();
    if per_window < 2.0 {
        return Err(Error::CoarseGrid(format!(
            "T = {horizon} s over {n_windows} windows at dt = {dt} s leaves {per_window} samples per window"
        )));
    }
    Ok(Grid {
        layout: SectionLayout::new(n_windows, per_window as usize)?,
        dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Low-pass cutoff for the joint angles; `None` disables filtering.
    pub cutoff_hz: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { cutoff_hz: Some(5.0) }
    }
}

/// Derivative by central differences, second-order one-sided at the ends.
pub fn differentiate(x: &[Vector2<f64>], dt: f64) -> Vec<Vector2<f64>> {
    let n = x.len();
    assert!(n >= 3, "differentiation needs at least three samples");
    (0..n)
        .map(|k| match k {
            0 => (x[1] * 4.0 - x[0] * 3.0 - x[2]) / (2.0 * dt),
            _ if k == n - 1 => (x[n - 1] * 3.0 - x[n - 2] * 4.0 + x[n - 3]) / (2.0 * dt),
            _ => (x[k + 1] - x[k - 1]) / (2.0 * dt),
        })
        .collect()
}

/// Linear interpolation of `(t, q)` at `n + 1` equally spaced times spanning it.
pub fn resample(t: &[f64], q: &[Vector2<f64>], n: usize) -> Vec<Vector2<f64>> {
    let t0 = t[0];
    let span = t[t.len() - 1] - t0;
    (0..=n)
        .map(|k| {
            let tk = t0 + span * k as f64 / n as f64;
            let hi = t.partition_point(|&ti| ti < tk).clamp(1, t.len() - 1);
            let lo = hi - 1;
            let w = ((tk - t[lo]) / (t[hi] - t[lo])).clamp(0.0, 1.0);
            if w == 0.0 {
                q[lo]
            } else if w == 1.0 {
                q[hi]
            } else {
                q[lo] * (1.0 - w) + q[hi] * w
            }
        })
        .collect()
}

/// Filter, resample onto `grid`, differentiate, and reconstruct torques by
/// inverse dynamics.
///
/// The trial's own duration is mapped onto the grid horizon. Torques are
/// reconstructed along the Euler rollout from the first sample: knot `t`
/// receives the torque whose Euler step lands on the differentiated velocity
/// at `t + 1`. The open-loop arm amplifies state errors by orders of
/// magnitude over a reach, so torques computed at the recorded states alone
/// do not reproduce the motion.
pub fn preprocess(raw: &RawDemo, params: &ArmParams, grid: &Grid, config: &PreprocessConfig) -> Result<Trajectory> {
    check_samples(&raw.t, &raw.q).map_err(|e| Error::TrialRejected(e.message))?;
    let q = match config.cutoff_hz {
        Some(cutoff) => {
            let time_constant = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
            if raw.duration() < 2.0 * time_constant {
                return Err(Error::TrialRejected(format!(
                    "trial lasts {} s, shorter than two filter time constants ({} s)",
                    raw.duration(),
                    2.0 * time_constant
                )));
            }
            let filter = Biquad::butterworth_lowpass(cutoff, 1.0 / raw.mean_dt())?;
            let q1 = filter.filtfilt(&raw.q.iter().map(|v| v[0]).collect::<Vec<_>>())?;
            let q2 = filter.filtfilt(&raw.q.iter().map(|v| v[1]).collect::<Vec<_>>())?;
            q1.into_iter().zip(q2).map(|(a, b)| Vector2::new(a, b)).collect()
        }
        None => raw.q.clone(),
    };
    let n = grid.n_steps();
    let dt = grid.dt;
    let q = resample(&raw.t, &q, n);
    let dq = differentiate(&q, dt);

    let mut controls = Vec::with_capacity(n);
    let mut x = JointState::new(q[0], dq[0]);
    for target in &dq[1..] {
        let ddq = (target - x.dq) / dt;
        let u = arm::inverse_dynamics(params, &x.q, &x.dq, &ddq);
        x = arm::step_euler(params, &x, &u, dt)?;
        controls.push(u);
    }
    let states = q.into_iter().zip(dq).map(|(q, dq)| JointState::new(q, dq)).collect();
    Trajectory::new(states, controls, dt)
}

/// Recorded angles of a trajectory as a raw trial with time starting at zero.
pub fn raw_from_trajectory(traj: &Trajectory, meta: TrialMeta) -> RawDemo {
    RawDemo {
        meta,
        t: (0..traj.n_samples()).map(|k| k as f64 * traj.dt).collect(),
        q: traj.states.iter().map(|s| s.q).collect(),
    }
}

/// Horizontal hand position at the last recorded sample.
pub fn final_hand_x(raw: &RawDemo, params: &ArmParams) -> f64 {
    arm::forward_kinematics(params, &raw.q[raw.q.len() - 1])[0]
}
