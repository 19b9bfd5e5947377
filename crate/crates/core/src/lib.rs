//! Planar Berry random waves: simulation, excursion-set Euler characteristic
//! estimators, closed-form limit theory and Monte Carlo validation.

pub mod chaosnum;
pub mod covariance;
pub mod error;
pub mod field;
pub mod geometry;
pub mod harness;
pub mod par;
pub mod quad;
pub mod specfun;
pub mod theory;
pub mod validation;

pub use error::{Error, Result};
