use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::kernels::KernelError;
use crate::quad::QuadError;
use crate::rearrange::GridError;
use crate::solvers::SolveError;
use crate::verify::VerifyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error; each module keeps its own enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
