//! Adaptive Morley finite elements for the clamped Kirchhoff plate.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: conforming triangulations, newest-vertex bisection, overlay.
//! * [`element`]: the Morley space, its DOF map and the transfer operators.
//! * [`system`]: plate material, assembly and the sparse solve.
//! * [`estimator`]: residual indicators, oscillation and the residual functional.
//! * [`adapt`]: bulk marking and the solve–estimate–mark–refine loop.
//! * [`bench`]: benchmark problems, rate fitting and the verification suites.

pub mod adapt;
pub mod bench;
pub mod element;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod mesh;
pub mod system;

pub use error::{AfemError, Result};
pub use geometry::{Point, Sym2};
pub use mesh::Triangulation;
