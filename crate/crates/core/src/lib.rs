//! Spectral stability of `H = -D u'' + V(x) u` on the real line via the Maslov index.

pub mod error;
pub mod cli;
pub mod config;
pub mod evans;
pub mod linalg;
pub mod maslov;
pub mod ode;
pub mod oracle;
pub mod potential;
pub mod problem;
pub mod propagation;
pub mod pulse;
pub mod report;
pub mod spline;
pub mod symplectic;

pub use error::{Error, Result, Side};
