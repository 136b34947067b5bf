//! Second-order cone coordination model and its solver adapter.

mod model;
mod program;

pub use model::{
    build, extract, relaxation_gap, CoordinationProblem, CoordinationProgram, CoordinationResult,
    Curtailment, Layout, ObjectiveBreakdown, Setpoint, SNAP_KW,
};
pub use program::{
    ClarabelBackend, Cone, ConicProgram, ConicSolution, ConicSolver, SolveStatus, SolverSettings,
};

use thiserror::Error;

use crate::grid::GridError;

#[derive(Debug, Error)]
pub enum SocpError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("cannot build coordination model: {0}")]
    Build(String),
    #[error("malformed cone program: {0}")]
    Malformed(String),
    #[error("solver backend failure: {0}")]
    Backend(String),
    #[error("solution is not optimal ({0:?})")]
    NotOptimal(SolveStatus),
}

/// Build, solve, extract. Returns the raw solution alongside the result, or
/// only the solution when it is not optimal.
pub fn coordinate(
    problem: &CoordinationProblem,
    solver: &dyn ConicSolver,
) -> Result<(ConicSolution, Option<CoordinationResult>), SocpError> {
    let built = build(problem)?;
    let solution = solver.solve(&built.program)?;
    if solution.status != SolveStatus::Optimal {
        return Ok((solution, None));
    }
    let result = extract(problem, &built, &solution)?;
    Ok((solution, Some(result)))
}
