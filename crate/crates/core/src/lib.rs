//! Numerical laboratory for the two-dimensional inviscid Boussinesq system in
//! vorticity-density form on a periodic box.

pub mod dyadic;
pub mod error;
pub mod estimates;
pub mod flow;
pub mod frame;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod patch;
pub mod random;
pub mod smooth;
pub mod solver;
pub mod spectral;

pub use error::{LabError, Result};
pub use spectral::{biot_savart, dealias, spectral_derivative, Axis, GridSpec, ScalarField, VelocityField};
