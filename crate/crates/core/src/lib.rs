//! Matrix-free near-field MIMO radar imaging.
//!
//! Simulates stepped-frequency MIMO measurements under the Born model and
//! reconstructs complex 3D reflectivity with l1-regularized proximal
//! gradient iterations, either with the full gradient (PGM) or with
//! structured minibatch gradients (SPGM).

pub mod cli;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
mod kernels;
pub mod metrics;
pub mod phantom;
pub mod solver;

pub use error::{Error, Result};
pub use forward::{BornOperator, ChannelSubset, MeasurementSet, ReflectivityVolume};
pub use geometry::{ImagingScenario, Vec3, VoxelGrid};
pub use solver::{Composition, MinibatchComposition, SolveReport, SolverConfig, Termination};
