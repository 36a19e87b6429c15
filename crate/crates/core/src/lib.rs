//! Cyclic urn processes: simulation, exact moments, spectral residuals and
//! their limit laws.
//!
//! An urn with balls of types `0..m` evolves by drawing a ball uniformly,
//! returning it, and adding a ball of the next type mod m. For m >= 7 the
//! normalized composition oscillates; this crate tracks the martingale
//! limits behind the oscillation, the residual fluctuations around it, and
//! the covariance matrices those fluctuations converge to.

pub mod error;
pub mod gamma;
pub mod harness;
pub mod limits;
pub mod logpolar;
pub mod moments;
pub mod oracle;
pub mod residuals;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod urn;

pub use error::{Result, UrnError};
pub use logpolar::LogPolarComplex;
pub use spectral::{eigen_data, EigenData, ProjectionClass};
pub use urn::{Composition, Trajectory, UrnParams};
