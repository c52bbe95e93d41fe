//! Numerical workbench for divergence-form lattice operators: Dirichlet
//! Green kernels over box exhaustions, weighted Green operators on the
//! one-parameter family of Lebesgue spaces L^p(phi_p), criticality
//! classification, spectral and semigroup diagnostics, and tail
//! perturbation functionals.

pub mod error;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod operator;
pub mod spaces;
pub mod perturbation;
pub mod runner;
pub mod scenario;
pub mod spectral;
