//! Rotation averaging over SO(3).
//!
//! Given noisy relative rotation measurements on a graph, the crate recovers
//! absolute orientations by minimizing the chordal-distance cost
//! `f(R) = -trace(R^T M R)`, where `M` is the symmetric block matrix of
//! pairwise measurements. Two solvers are provided:
//!
//! * [`solver::solve`]: a primal-dual iteration for general connected graphs.
//!   Each step extracts the three smallest eigenvectors of `Lambda - M`,
//!   projects the blocks onto SO(3), and rebuilds the dual multiplier from the
//!   KKT conditions. When the smallest eigenvalues of `Lambda - M` vanish the
//!   iterate is a certified global optimum.
//! * [`cycle::solve_cycle`]: a closed-form, globally optimal solver for cycle
//!   graphs built from the n-th roots of the cycle error rotation.
//!
//! Supporting modules: [`so3`] (rotation kernels), [`graph`] (measurement
//! graphs and block operators), [`eigen`] (smallest-eigenpair solver),
//! [`synth`] (reproducible synthetic problems), and [`g2o`] (dataset I/O).

pub mod cycle;
pub mod eigen;
pub mod g2o;
pub mod graph;
pub mod so3;
pub mod solver;
pub mod synth;

pub use cycle::{solve_cycle, CycleProblem, CycleSolution};
pub use g2o::{parse_g2o, write_solution, Dataset};
pub use graph::{BlockDiagonal, BlockVector, MeasurementGraph, PairwiseMatrix};
pub use so3::{AxisAngle, Rotation};
pub use solver::{solve, Certificate, SolveReport, SolverConfig};
pub use synth::{generate_cycle, generate_graph, generate_grid, CycleSpec, GraphSpec, GridSpec};
