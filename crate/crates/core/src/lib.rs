//! Velocity-space solver for the spatially homogeneous Landau equation with
//! soft potentials, together with numerical checks of its a-priori estimates.

pub mod coefficients;
pub mod degiorgi;
pub mod error;
mod fft;
pub mod functionals;
pub mod grid;
pub mod inequalities;
pub mod lorentz;
pub mod solver;

pub use error::{LandauError, Result};
