//! Self-contained convex solver for the subproblems of every design
//! algorithm: maximize linear plus weighted-log objectives over Hermitian PSD
//! matrices and real vectors, under affine and convex quadratic constraints.

mod barrier;
mod problem;

pub use barrier::{
    phase1_feasible_point, solve, SolveReport, SolveStatus, Solved, SolverError, SolverOptions,
};
pub use problem::{AffineExpr, ConvexProblem, Point, PsdCoef, PsdVar, QuadraticConstraint, Solution, VecVar};
