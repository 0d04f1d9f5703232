//! Learning time-varying cost weights of planar two-link reaching movements.
//!
//! The crate is organised bottom-up:
//!
//! * [`arm`]: kinematics and rigid-body dynamics of the two-link arm.
//! * [`features`]: the seven windowed biomechanical cost features.
//! * [`doc`]: direct optimal control of a reach for given weights.
//! * [`moirl`]: the iterative weight-learning loop.
//! * [`data`]: demonstration loading, preprocessing and synthetic generation.
//! * [`eval`]: training, cross-validation and reporting.

pub mod arm;
pub mod data;
pub mod doc;
pub mod dual;
pub mod error;
pub mod features;
pub mod eval;
pub mod moirl;

pub use error::{Error, Result};
