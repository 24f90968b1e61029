//! Reduced-density-matrix dynamics of a particle coupled to a chaotic bath
//! described by parametric banded random matrices.

pub mod analytic;
pub mod classical;
pub mod config;
pub mod error;
pub mod evolver;
pub mod fft;
pub mod grid;
pub mod model;
pub mod numerics;
pub mod observables;
pub mod rmt;
pub mod runner;
pub mod snapshot;

pub use error::{Error, Result};
pub use grid::{DensityMatrixGrid, GaussianState, GridGeometry};
pub use model::{CorrelatorSpec, LevyCompletion, PhysicalParams, PotentialSpec};
pub use evolver::{evolve, residual_norm, SolverOptions, Terms, Trajectory};
