//! Milstein scheme for SDEs driven by continuous semimartingales.
//!
//! The crate simulates coupled coarse/fine paths, runs Euler and Milstein
//! schemes on them, evaluates the discretization functionals that govern
//! the normalized error, and simulates the limiting error laws.

pub mod error;
pub mod limits;
pub mod model;
pub mod montecarlo;
pub mod paths;
pub mod quad;
mod scalar;
pub mod schemes;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid = paths::Grid;
pub type PathBundle = paths::PathBundle<f64>;
pub type DriverSpec = paths::DriverSpec<f64>;
pub type SdeProblem = model::SdeProblem<f64>;
