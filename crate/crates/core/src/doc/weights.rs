use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{columns_of, rows_of, FeatureMatrix, N_FEATURES};

/// Nonnegative cost weights `ω`, one column of `N_Φ` entries per window.
///
/// Serialized as `N_Φ` rows of `N_w` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct WeightMatrix {
    columns: Vec<[f64; N_FEATURES]>,
}

impl WeightMatrix {
    pub fn from_columns(columns: Vec<[f64; N_FEATURES]>) -> Result<Self> {
        let w = WeightMatrix { columns };
        w.validate()?;
        Ok(w)
    }

    pub fn uniform(n_windows: usize, value: f64) -> Self {
        WeightMatrix {
            columns: vec![[value; N_FEATURES]; n_windows],
        }
    }

    /// The same column repeated over every window.
    pub fn constant(n_windows: usize, column: [f64; N_FEATURES]) -> Result<Self> {
        Self::from_columns(vec![column; n_windows])
    }

    pub fn zeros(n_windows: usize) -> Self {
        Self::uniform(n_windows, 0.0)
    }

    /// Weight matrix from a window-major flat vector (see [`FeatureMatrix::flat`]).
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || flat.len() % N_FEATURES != 0 {
            return Err(Error::ShapeMismatch(format!(
                "flat weight vector of length {} is not a multiple of {N_FEATURES}",
                flat.len()
            )));
        }
        let columns = flat
            .chunks_exact(N_FEATURES)
            .map(|c| std::array::from_fn(|j| c[j]))
            .collect();
        Self::from_columns(columns)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::ShapeMismatch("weight matrix has no windows".into()));
        }
        if self.columns.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract("weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_windows(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, feature: usize, window: usize) -> f64 {
        self.columns[window][feature]
    }

    pub fn set(&mut self, feature: usize, window: usize, value: f64) {
        self.columns[window][feature] = value;
    }

    pub fn column(&self, window: usize) -> &[f64; N_FEATURES] {
        &self.columns[window]
    }

    pub fn columns(&self) -> &[[f64; N_FEATURES]] {
        &self.columns
    }

    pub fn flat(&self) -> Vec<f64> {
        self.columns.iter().flatten().copied().collect()
    }

    pub fn total(&self) -> f64 {
        self.columns.iter().flatten().sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.columns.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }

    pub fn min_entry(&self) -> f64 {
        self.columns
            .iter()
            .flatten()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WeightMatrix {
            columns: self
                .columns
                .iter()
                .map(|c| c.map(|v| v * factor))
                .collect(),
        }
    }

    /// `Σ_s Σ_j ω_{j,s} Φ_{j,s}`.
    pub fn dot(&self, features: &FeatureMatrix) -> Result<f64> {
        if features.n_windows() != self.n_windows() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight windows vs {} feature windows",
                self.n_windows(),
                features.n_windows()
            )));
        }
        Ok(self
            .columns
            .iter()
            .zip(features.columns())
            .map(|(w, f)| w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    }

    /// Each column divided by its sum.
    pub fn normalized_columns(&self) -> Vec<[f64; N_FEATURES]> {
        self.columns
            .iter()
            .map(|c| {
                let s: f64 = c.iter().sum();
                assert!(s > 0.0, "weight column with zero mass");
                c.map(|v| v / s)
            })
            .collect()
    }
}

impl From<WeightMatrix> for Vec<Vec<f64>> {
    fn from(m: WeightMatrix) -> Self {
        rows_of(&m.columns)
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let columns = columns_of(&rows)?;
        WeightMatrix::from_columns(columns).map_err(|e| e.to_string())
    }
}
