//! Numerical workbench for enclosure-type reconstruction of obstacles in an
//! anisotropic time-harmonic Maxwell medium.
//!
//! The pipeline: certify strong ellipticity of the reduced second-order
//! systems, construct oscillating-decaying probe solutions on half-spaces,
//! synthesize boundary impedance data with and without an obstacle on a
//! staggered-grid frequency-domain solver, evaluate the indicator function
//! over (tau, t) sweeps, and intersect the recovered support-function
//! half-spaces into a convex hull.

pub mod config;
pub mod ellipticity;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod io;
pub mod numerics;
pub mod od;
pub mod tensor;

pub use error::{OdemError, Result};
