//! Regularized inversion of field readings and certification of total
//! variation minimality.

mod certify;
mod solver;

pub use certify::{
    certify_tv_minimal, ep1_oracle, kernel_dimension_check, loop_measure, silent_combination,
    variational_certify, CertifyMode, Ep1Result, KernelReport, MinimalityReport, MinimizerShape,
    VariationalReport, Verdict, CYCLE_GUARD, PAIRING_TOL,
};
pub use solver::{
    lambda_path, optimality_certificate, solution_edges, solve_ep2, support_coefficients,
    tv_distance, write_path_csv, CertReport, InversionProblem, PathPoint, Solution, SolveOptions,
};
