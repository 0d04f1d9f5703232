use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Trajectory;

/// Joint-angle RMSE in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointRmse {
    pub q1: f64,
    pub q2: f64,
    pub q: f64,
}

/// RMSE of `predicted` against `measured`, per joint and over both joints.
pub fn joint_rmse(predicted: &Trajectory, measured: &Trajectory) -> Result<JointRmse> {
    if predicted.n_samples() != measured.n_samples() || (predicted.dt - measured.dt).abs() > 1e-12 * measured.dt {
        return Err(Error::ShapeMismatch(format!(
            "predicted grid ({} samples, dt {}) differs from measured ({}, {})",
            predicted.n_samples(),
            predicted.dt,
            measured.n_samples(),
            measured.dt
        )));
    }
    let n = measured.n_samples() as f64;
    let mut sq = [0.0; 2];
    for (a, b) in predicted.states.iter().zip(&measured.states) {
        for (k, s) in sq.iter_mut().enumerate() {
            *s += (a.q[k] - b.q[k]).powi(2);
        }
    }
    Ok(JointRmse {
        q1: (sq[0] / n).sqrt().to_degrees(),
        q2: (sq[1] / n).sqrt().to_degrees(),
        q: ((sq[0] + sq[1]) / (2.0 * n)).sqrt().to_degrees(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); zero for one value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    CrossVal,
    Iscv,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::CrossVal => "cross-val",
            Split::Iscv => "iscv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRmse {
    pub subject: String,
    pub posture: String,
    pub trial: u32,
    pub rmse: JointRmse,
}

/// Failed evaluation of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub subject: String,
    pub trial: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Posture label, or `ALL` for the pooled row.
    pub posture: String,
    pub sections: usize,
    pub split: Split,
    pub n_trials: usize,
    pub q1: Option<MeanStd>,
    pub q2: Option<MeanStd>,
    pub q: Option<MeanStd>,
    pub trials: Vec<TrialRmse>,
    pub failed: Vec<FailedTrial>,
}

impl ReportRow {
    pub fn from_trials(posture: String, sections: usize, split: Split, trials: Vec<TrialRmse>, failed: Vec<FailedTrial>) -> Self {
        let pick = |f: fn(&JointRmse) -> f64| MeanStd::of(&trials.iter().map(|t| f(&t.rmse)).collect::<Vec<_>>());
        ReportRow {
            q1: pick(|r| r.q1),
            q2: pick(|r| r.q2),
            q: pick(|r| r.q),
            n_trials: trials.len(),
            posture,
            sections,
            split,
            trials,
            failed,
        }
    }
}

pub const ALL_POSTURES: &str = "ALL";

/// One row per posture, section count and split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rows: Vec<ReportRow>,
    /// Runs and rows that could not be produced.
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub split: Split,
    pub message: String,
}

impl RmseReport {
    /// Replace every row and diagnostic of `split`; pooled rows are added.
    pub fn set_split(&mut self, split: Split, rows: Vec<ReportRow>, diagnostics: Vec<String>) {
        self.rows.retain(|r| r.split != split);
        self.diagnostics.retain(|d| d.split != split);
        self.diagnostics
            .extend(diagnostics.into_iter().map(|message| Diagnostic { split, message }));
        let pooled = pooled_rows(&rows);
        self.rows.extend(rows);
        self.rows.extend(pooled);
        self.rows.sort_by(|a, b| {
            (a.split, a.sections, a.posture == ALL_POSTURES, &a.posture)
                .cmp(&(b.split, b.sections, b.posture == ALL_POSTURES, &b.posture))
        });
    }

    /// Every row rebuilt from its per-trial values.
    pub fn reaggregated(&self) -> RmseReport {
        RmseReport {
            rows: self
                .rows
                .iter()
                .map(|r| ReportRow::from_trials(r.posture.clone(), r.sections, r.split, r.trials.clone(), r.failed.clone()))
                .collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn row(&self, posture: &str, sections: usize, split: Split) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.posture == posture && r.sections == sections && r.split == split)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "posture", "sections", "split", "n_trials", "q1_mean", "q1_std", "q2_mean", "q2_std", "q_mean", "q_std",
            "failed",
        ])?;
        let cell = |m: &Option<MeanStd>, std: bool| match m {
            Some(m) => format!("{:.6}", if std { m.std } else { m.mean }),
            None => String::new(),
        };
        for r in &self.rows {
            w.write_record([
                r.posture.clone(),
                r.sections.to_string(),
                r.split.to_string(),
                r.n_trials.to_string(),
                cell(&r.q1, false),
                cell(&r.q1, true),
                cell(&r.q2, false),
                cell(&r.q2, true),
                cell(&r.q, false),
                cell(&r.q, true),
                r.failed.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per split and section count, one row pooling every posture's trials.
fn pooled_rows(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut keys: Vec<(Split, usize)> = rows
        .iter()
        .filter(|r| r.posture != ALL_POSTURES)
        .map(|r| (r.split, r.sections))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(split, sections)| {
            let members = rows
                .iter()
                .filter(|r| r.split == split && r.sections == sections && r.posture != ALL_POSTURES);
            let mut trials = Vec::new();
            let mut failed = Vec::new();
            for r in members {
                trials.extend(r.trials.iter().cloned());
                failed.extend(r.failed.iter().cloned());
            }
            ReportRow::from_trials(ALL_POSTURES.into(), sections, split, trials, failed)
        })
        .collect()
}
