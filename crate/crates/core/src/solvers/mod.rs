//! Forward-pass solvers: exact time-varying LQR and iLQR.

mod ilqr;
mod lqr;

pub use ilqr::{solve_ilqr, solve_ilqr_from, IlqrSolution, IlqrStatus, SolverOpts};
pub use lqr::{solve_lqr, FeedbackGains, LqrProblem, LqrSolution, LqrStage};
