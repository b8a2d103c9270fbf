//! Robust projective structure-from-motion with self-calibration.
//!
//! The pipeline: depth-scaled correspondences form a measurement matrix,
//! whose rank-4 factorization gives a projective reconstruction; a per-instance
//! optimizer weights correspondences to suppress outliers while fitting a
//! shared calibration through the dual absolute quadric.

pub mod encoder;
pub mod eval;
pub mod factorization;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod selfcalib;
pub mod solver;
pub mod synth;
