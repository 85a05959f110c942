//! Convolution-quadrature marching-on-in-time solvers for the time-domain
//! electric field integral equation on closed triangulated surfaces.
//!
//! The pipeline runs mesh -> basis -> kernel -> formulation (per Laplace
//! value) -> convolution quadrature -> time marching, with analysis tools
//! (conditioning, polynomial eigenvalues, probes) on top.

pub mod analysis;
pub mod basis;
pub mod cq;
pub mod error;
pub mod excitation;
pub mod formulations;
pub mod kernel;
pub mod linalg;
pub mod march;
pub mod mesh;
pub mod qhelm;
pub mod quadrature;

pub use error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;
/// Free-space wave impedance (ohm).
pub const ETA0: f64 = 376.730_313_668;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type C64 = num_complex::Complex64;
