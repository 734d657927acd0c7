//! Quadrature, quasi-interpolation and finite element kernels for problems
//! whose coefficients or norms carry a degenerate (Muckenhoupt-class) weight.
//!
//! The crate is organised around six modules:
//!
//! * [`weights`] — weight functions (power, extension, point-mass regularisations),
//!   averaged measures and Muckenhoupt-constant estimation over families of balls;
//! * [`mesh`] — structured simplicial and tensor-product meshes, graded partitions,
//!   stars/patches and shape diagnostics;
//! * [`quad`] — weight-adapted quadrature rules and weighted Lebesgue/Sobolev norms;
//! * [`taylor`] — smoothed (averaged) Taylor polynomials built from compactly
//!   supported bumps, with stability and Poincaré probes;
//! * [`interp`] — Lagrange spaces, the quasi-interpolation operator and error
//!   tables in one weighted norm or between two different metrics;
//! * [`fem`] — weighted elliptic solvers: degenerate diffusion, point sources,
//!   and the extension-problem approach to spectral fractional diffusion.
//!
//! Everything is deterministic: rules, solvers and reductions are ordered, so
//! repeated runs produce identical bytes.

pub mod error;
pub mod gauss;
pub mod geometry;
pub mod poly;

pub mod fem;
pub mod interp;
pub mod mesh;
pub mod quad;
pub mod taylor;
pub mod weights;

pub use error::{Error, Result};
pub use geometry::{Ball, MultiIndex, Point, Region};
pub use poly::Poly;
