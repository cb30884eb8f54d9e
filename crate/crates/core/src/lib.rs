//! Bilevel hyperparameter selection by a value-function difference-of-convex
//! method, with the cone solver, problem builders, search baselines and the
//! experiment harness it needs.

pub mod applications;
pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod lower_level;
pub mod lowering;
pub mod matrix;
pub mod problem;
pub mod vfidca;

pub use baselines::{grid_search, random_search, Axis, AxisTarget, SearchResult, SearchSpace};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ExperimentRecord, ExperimentReport, Method, ProblemConfig};
pub use kernel::{ConeProgram, SolveOptions, SolveResult, Status};
pub use lower_level::{solve_ll, value_function_probe, LLSolution, LowerLevelSolver};
pub use matrix::Matrix;
pub use problem::{eval_piece, feasibility_gap, penalty_vector, BilevelSpec, BoxDomain, ConvexPiece, Iterate, PieceKind};
pub use vfidca::{kkt_report, penalty_update, AlgoOptions, IterRecord, KktReport, SubproblemCertificate, Termination, Trace, VfIdca};
