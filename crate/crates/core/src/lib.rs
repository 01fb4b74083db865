//! Nonlocal Dirichlet problems with symmetric Lévy-type kernels, discrete
//! Schwarz rearrangements, and numerical checks of mass-concentration
//! comparison between a problem and its symmetrized counterpart.

pub mod assembly;
pub mod error;
pub mod kernels;
pub mod quad;
pub mod rearrange;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
