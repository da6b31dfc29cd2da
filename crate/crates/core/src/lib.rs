//! Multiscale Petrov-Galerkin solver for the time-harmonic elastic wave
//! equation on structured Q1 meshes, with Kupradze-matrix potentials and an
//! inf-sup stability probe.

pub mod correctors;
pub mod fe;
pub mod interpolation;
pub mod kupradze;
pub mod linalg;
pub mod mesh;
pub mod solver;
pub mod stability;

pub use fe::{DofMap, MaterialParams};
pub use linalg::{SparseComplexMatrix, C64};
pub use mesh::{AxisBox, BoundaryKind, DomainSpec, StructuredMesh};
pub use solver::{ErrorReport, MspgOptions, MspgSolution, ProblemData, SolveError};
