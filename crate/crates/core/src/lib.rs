//! Numerical toolkit for constant scalar curvature metrics on toric
//! surfaces: decides stability of a weighted convex polygon by scanning the
//! linear functional `L_{A,σ}` over hinge functions, computes symplectic
//! potentials by minimizing the associated convex functional, and evaluates
//! the closed-form model families and a-priori diagnostics used to validate
//! both.

pub mod analytic;
pub mod cli;
pub mod diagnostics;
pub mod geometry;
pub mod potential;
pub mod solver;
pub mod stability;

pub use geometry::{build_polytope, AffineFunction, CurvatureSpec, Point2, Polygon, Polytope};
pub use potential::PotentialField;
pub use solver::{minimize_m, SolverConfig, SolverResult};
pub use stability::{scan_positivity, ScanConfig, StabilityReport, StabilityStatus};

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
