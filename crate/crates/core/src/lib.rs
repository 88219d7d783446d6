//! Spectral analysis of Laplace operators on compact metric graphs.
//!
//! A metric graph carries a Laplacian whose self-adjoint realizations are
//! parametrized by boundary conditions `A F + B F' = 0` on the edge-end
//! boundary values. This crate computes the full spectrum (negative, zero,
//! and positive eigenvalues with multiplicities) of such operators and
//! verifies exact trace identities that relate the spectrum to sums over
//! periodic orbits of the underlying graph.
//!
//! Modules mirror the pipeline: [`graph`] describes the combinatorial and
//! metric data, [`boundary`] canonicalizes boundary conditions, [`scattering`]
//! evaluates the vertex scattering matrices and the quantum map, [`spectrum`]
//! extracts eigenvalues, and [`traceformula`] evaluates the trace identities
//! against that spectrum. [`config`] and [`report`] back the `qgraph` binary.

pub mod boundary;
pub mod config;
pub mod graph;
mod linalg;
pub mod report;
pub mod scattering;
pub mod spectrum;
pub mod traceformula;

pub use num_complex::Complex64;

/// Convenience alias used throughout: dense complex matrix.
pub type CMatrix = ndarray::Array2<Complex64>;
/// Convenience alias used throughout: dense complex vector.
pub type CVector = ndarray::Array1<Complex64>;
