//! Bootstrapped average hierarchical clustering (BAHC) filtering of
//! correlation and covariance matrices.

pub mod baselines;
pub mod bootstrap;
pub mod error;
pub mod harness;
pub mod hierclust;
pub mod io;
pub mod matrix;
pub mod portfolio;
pub mod seeding;
pub mod spectral;

pub use error::{Error, Result};
