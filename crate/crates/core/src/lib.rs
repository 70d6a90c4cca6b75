//! Numerical core for a fully nonlinear second-Hessian (sigma_2) equation on
//! flat complex tori carrying Kahler or pluriclosed Hermitian metrics.
//!
//! The crate provides
//!
//! - discrete exterior calculus for (p,q)-forms on the real 2n-torus with
//!   spectral (trigonometric collocation) derivatives,
//! - pointwise Hermitian pencil algebra (eigenvalues, sigma_1/sigma_2, the
//!   Gamma_2 cone test, and the sigma_2^{1/2} derivative tensor),
//! - geometry constructors for flat and SKT (pluriclosed) torus metrics and
//!   the associated problem data,
//! - the equation residual in both divergence and Hessian form, their exact
//!   pointwise proportionality factor,
//! - the linearized operators, the auxiliary gauge function solve, and a
//!   matrix-free Newton-Krylov continuation driver,
//! - monitors that turn the a-priori estimates of the underlying analysis
//!   into measured, refinement-stable ratios.
//!
//! # Conventions
//!
//! The torus is `[0, 2pi)^{2n}` with complex coordinates
//! `z_j = x_{2j-1} + i x_{2j}` (axes numbered from 1). Coefficient arrays
//! store plain multi-indexed values `a_{I Jbar}`; each field additionally
//! carries the power of `sqrt(-1)` that multiplies the stored basis
//! expansion, so a real (1,1)-form keeps a pointwise Hermitian coefficient
//! matrix and the `sqrt(-1)` factors are resolved only when a top-degree
//! form is divided by `omega^n`. The top-form convention is
//! `omega^n = n! det(g) 2^n dx^1 ∧ ... ∧ dx^{2n}`, and all integrals use the
//! measure `omega^n / n!` with the base metric scaled to unit volume.

pub mod config;
pub mod continuation;
pub mod error;
pub mod exec;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod hessian;
pub mod io;
pub mod linearized;
pub mod monitors;
pub mod probes;
pub mod residual;
pub mod smallalg;
pub mod solver;
pub mod spectral;

pub mod checks;

pub use error::{CoreError, Result};
pub use grid::GridSpec;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
