//! Structured Q1 finite elements on the cube `(-1,1)^{d-1} × (0,1)`.

mod assembly;
mod cutoff;
mod grid;

use thiserror::Error;

pub use assembly::{
    assemble_residual, element_dofs, external_force, free_part, Assembler, LoadData, TangentField,
};
pub use cutoff::{cutoff_value, make_cutoff, smoothstep, Cutoff, CutoffSide};
pub use grid::{sym_gradient, BoundaryMode, Geometry, Grid, NodeTag, NOT_FREE};

use crate::linalg::{pcg, BandCholesky, CsrMatrix, LinearSolveError};

/// Largest band storage (in entries) handed to the direct solver; beyond it
/// the factorization cost dominates and preconditioned CG is used instead.
pub const DIRECT_SOLVER_MAX_BAND: usize = 8_000_000;
pub const PCG_RTOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("unsupported dimension {0}, expected 2 or 3")]
    UnsupportedDimension(usize),
    #[error("grid resolution n = {0} too coarse, need n >= 2")]
    TooCoarse(usize),
    #[error("field has {got} entries, expected {expected}")]
    FieldSize { expected: usize, got: usize },
    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),
    #[error("singular tangent: {0}")]
    Singular(#[from] LinearSolveError),
}

/// Factorized (or iterative) solver for the global stiffness on free unknowns.
pub enum LinearSolver {
    Direct(BandCholesky),
    Iterative(CsrMatrix),
}

impl LinearSolver {
    pub fn new(matrix: CsrMatrix) -> Result<Self, DiscretizationError> {
        if matrix.n * (matrix.bandwidth() + 1) <= DIRECT_SOLVER_MAX_BAND {
            Ok(Self::Direct(BandCholesky::factor(&matrix)?))
        } else {
            Ok(Self::Iterative(matrix))
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, DiscretizationError> {
        match self {
            Self::Direct(f) => Ok(f.solve(b)?),
            Self::Iterative(a) => Ok(pcg(a, b, PCG_RTOL, 20 * a.n.max(100))?.0),
        }
    }
}
