use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid arm parameters: {0}")]
    InvalidParams(String),

    #[error("mass matrix is singular (det = {det:e})")]
    SingularMassMatrix { det: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("target x = {target_x} m is outside the reachable workspace (|x| <= {reach} m)")]
    InfeasibleTarget { target_x: f64, reach: f64 },

    #[error("layout too coarse: {0}")]
    CoarseGrid(String),

    #[error("weight-update solver failed after {iterations} iterations (projected gradient {grad_norm:e})")]
    DeltaSolver {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("trajectory optimization did not converge: {0}")]
    DocFailed(String),

    #[error("trial rejected: {0}")]
    TrialRejected(String),

    #[error("dataset error in {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "invalid_params",
            Error::SingularMassMatrix { .. } => "singular_mass_matrix",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Contract(_) => "contract",
            Error::InfeasibleTarget { .. } => "infeasible_target",
            Error::CoarseGrid(_) => "coarse_grid",
            Error::DeltaSolver { .. } => "delta_solver",
            Error::DocFailed(_) => "doc_failed",
            Error::TrialRejected(_) => "trial_rejected",
            Error::Dataset { .. } => "dataset",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
