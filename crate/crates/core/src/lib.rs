//! Numerical laboratory for zero-scalar-curvature Yamabe metrics and the
//! Yamabe flow on radially symmetric manifolds.
//!
//! * [`geometry`] builds warped-product models and their curvatures.
//! * [`elliptic`] assembles the conformal Laplacian and solves the
//!   Dirichlet ball problems, domain exhaustion and the two constructions
//!   of zero-scalar-curvature conformal factors.
//! * [`flow`] evolves the Yamabe flow implicitly and checks barriers.
//! * [`stability`] verifies the local L¹-stability inequality, Kato's
//!   inequality and the uniqueness decay.
//! * [`riccati`] covers the Schrödinger reduction and Riccati factorization
//!   of the radial Yamabe equation.

pub mod elliptic;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod laplacian;
pub mod riccati;
pub mod stability;
pub mod stencil;
pub mod tridiag;

pub use error::{Error, Result};
pub use geometry::{build_profile, ManifoldModel, Mode, Profile, ProfileSpec};
pub use grid::{GridFunction, RadialGrid};
