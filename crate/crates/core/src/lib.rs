//! Numerical analysis of discrete-time competitive Kolmogorov maps: fixed
//! points and their spectra, carrying-simplex existence checks, the carrying
//! simplex itself as a radial graph, invariant manifolds of interior saddles
//! and classification of three-species interaction matrices.

pub mod analysis;
pub mod classify;
pub mod eigen;
pub mod error;
pub mod existence;
pub mod manifolds;
pub mod models;
pub mod pipeline;
pub mod portrait;
pub mod simplex;

pub use error::{Error, Result};
pub use models::{CompetitiveMap, ModelConfig, ModelKind, ParameterSet};
