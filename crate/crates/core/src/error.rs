use thiserror::Error;

/// Errors raised across the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no axial fixed point on axis {axis}: {reason}")]
    NoAxialFixedPoint { axis: usize, reason: String },

    #[error("degenerate linear system for support {support:?}")]
    Degenerate { support: Vec<usize> },

    #[error("no interior fixed point: {0}")]
    NoInteriorFixedPoint(String),

    #[error("Newton iteration diverged after {iterations} steps (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("Jacobian is singular (det = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("fixed point is not hyperbolic: eigenvalue modulus {modulus} within {tol:e} of 1")]
    NonHyperbolic { modulus: f64, tol: f64 },

    #[error("1 is an eigenvalue of DT within {tol:e}; index undefined")]
    EigenvalueOne { tol: f64 },

    #[error("condition (C1) violated: {0}")]
    C1Violated(String),

    #[error("graph transform did not converge: residual {residual:e} after {iterations} sweeps")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("{count} ray(s) missed the image surface")]
    RayMissesSurface { count: usize },

    #[error("zero vector has no radial projection")]
    ZeroVector,

    #[error("too few mesh neighbors ({found}) within radius {radius:e}")]
    TooFewNeighbors { found: usize, radius: f64 },

    #[error("no mesh vertices within radius {radius:e}")]
    EmptyNeighborhood { radius: f64 },

    #[error("fixed point is not a saddle on S")]
    NotASaddle,

    #[error("no unstable eigendirection")]
    NoUnstableEigendirection,

    #[error("unstable branch {branch} did not reach an attractor after {steps} steps")]
    BranchDidNotTerminate { branch: String, steps: usize },

    #[error("fan segment at s = {s} does not straddle the two basins")]
    SegmentNotStraddling { s: f64 },

    #[error("orbit from {point:?} unresolved after {max_iter} iterations")]
    UnresolvedOrbit { point: Vec<f64>, max_iter: usize },

    #[error("boundary structure unsuitable: {0}")]
    BoundaryStructure(String),

    #[error("degenerate denominator in beta_{i}{j}", i = .pair.0 + 1, j = .pair.1 + 1)]
    DegenerateDenominator { pair: (usize, usize) },

    #[error("inequality `{label}` within {band:e} of its boundary (margin {margin:e})")]
    TieOnBoundary {
        label: String,
        margin: f64,
        band: f64,
    },

    #[error("operation requires n = 3, got n = {0}")]
    RequiresThreeSpecies(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
