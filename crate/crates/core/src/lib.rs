//! Bilinear Calderón–Zygmund machinery over finite atomic measures.
//!
//! Everything here works with measures that are finite sums of weighted
//! point masses. Each construction is exact on that class: suprema over
//! radii and truncation levels are taken over the finitely many breakpoints
//! where the underlying step functions jump.

pub mod decomposition;
pub mod dyadic;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod kernels;
pub mod maximal;
pub mod operators;
pub mod square_function;
pub mod suppression;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{AtomicMeasure, Ball, Cube, Point, Region};
pub use num_complex::Complex64 as C64;
