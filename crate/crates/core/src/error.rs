//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("radii must be strictly increasing, got {0} after {1}")]
    NonIncreasingRadii(i64, i64),
    #[error("ambient radius {ambient} is smaller than largest box radius {radius}")]
    AmbientTooSmall { ambient: i64, radius: i64 },
    #[error("measure is not positive at node {node:?} (value {value})")]
    NonPositiveMeasure { node: [i64; 3], value: f64 },
    #[error("radius {0} is not part of the exhaustion")]
    UnknownRadius(i64),
    #[error("anchor node {0:?} lies outside the smallest box")]
    AnchorOutsideSmallestBox([i64; 3]),
    #[error("dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("conductance must be positive on edge {from:?} -> {to:?} (value {value})")]
    NonPositiveConductance {
        from: [i64; 3],
        to: [i64; 3],
        value: f64,
    },
    #[error("weight W must be positive at node {node:?} (value {value})")]
    NonPositiveWeight { node: [i64; 3], value: f64 },
    #[error("coefficient field does not cover the requested box: {0}")]
    SpecDomainMismatch(String),
    #[error(
        "drift breaks the positivity structure on edge {from:?} -> {to:?}: \
         off-diagonal entry {entry} >= 0"
    )]
    DriftTooStrong {
        from: [i64; 3],
        to: [i64; 3],
        entry: f64,
    },
    #[error("Doob transform function must be positive at node {node:?} (value {value})")]
    NonPositiveTransformFunction { node: [i64; 3], value: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error)]
pub enum GreenError {
    #[error("shift {lambda} is not below the box principal eigenvalue {lambda0}")]
    ShiftAboveBoxEigenvalue { lambda: f64, lambda0: f64 },
    #[error("Green kernel lost positivity (min entry {min_entry}); drift validation was bypassed")]
    NonPositiveKernel { min_entry: f64 },
    #[error("principal eigenvalue did not settle on a real Perron pair (defect {defect})")]
    ComplexPrincipalEigenvalue { defect: f64 },
    #[error("eigensolver did not converge after {iterations} iterations (last increment {last_increment})")]
    SolverNoConvergence {
        iterations: usize,
        last_increment: f64,
    },
    #[error("invariance defect requires lambda < mu, got lambda={lambda}, mu={mu}")]
    OrderViolation { lambda: f64, mu: f64 },
    #[error("need at least {needed} radii in the exhaustion, got {got}")]
    TooFewRadii { needed: usize, got: usize },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("{what} must be positive at index {index} (value {value})")]
    NonPositiveInput {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("exponent must lie in [1, inf], got {0}")]
    ExponentOutOfRange(f64),
    #[error("operation requires a normalized family (Z = 1), got Z = {0}")]
    NotNormalized(f64),
    #[error("vector length {got} does not match the space dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("kernels live on different boxes ({0} vs {1})")]
    BoxMismatch(i64, i64),
    #[error("kernel must be entrywise positive (min entry {0})")]
    NonPositiveKernel(f64),
    #[error("box with {nodes} nodes exceeds the dense-eigensolve cap {cap}")]
    DenseCapExceeded { nodes: usize, cap: usize },
    #[error("top eigenvalue is degenerate: modulus gap {gap} below {tol}")]
    DegenerateTopEigenvalue { gap: f64, tol: f64 },
    #[error("power/inverse iteration did not converge after {0} iterations")]
    SolverNoConvergence(usize),
    #[error("Schur bound requires 1 < p < inf, got {0}")]
    ExponentOutOfRange(String),
    #[error("contraction violated at {context}: norm {norm} exceeds {bound}")]
    NotContractive {
        context: String,
        norm: f64,
        bound: f64,
    },
    #[error("shift {lambda1} lies outside the admissible set (mu = {mu})")]
    ShiftOutsideLambdaSet { lambda1: f64, mu: f64 },
    #[error("gelfand radius needs n_max >= 8, got {0}")]
    PowerBudgetTooSmall(usize),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Error)]
pub enum PerturbationError {
    #[error("operator is not subcritical at shift 0 (extrapolated lambda0 = {lambda0})")]
    NotSubcritical { lambda0: f64 },
    #[error("tail beyond radius {radius} is empty at ambient radius {ambient}")]
    TailEmpty { radius: i64, ambient: i64 },
    #[error("exclusion radius {0} leaves no nodes for the comparability estimate")]
    ExclusionTooLarge(i64),
    #[error("small-perturbation mode needs a dense ambient Green matrix; {nodes} nodes exceeds cap {cap}")]
    AmbientTooLargeForSmallMode { nodes: usize, cap: usize },
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown preset `{0}` for field {1}")]
    UnknownPreset(String, &'static str),
    #[error("suite `{suite}` requires `{dependency}` to run first")]
    SuiteDependencyUnmet {
        suite: &'static str,
        dependency: &'static str,
    },
    #[error("directory {0} contains no scenario files")]
    EmptyDirectory(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
}
