//! Staircase laminates of finite order, rank-one split certificates, and
//! piecewise-affine realizations of laminates on planar boxes.
//!
//! The crate is organised bottom-up:
//!
//! - [`numeric`]: exact rationals, small dense matrices, singular values.
//! - [`measure`]: finitely supported matrix measures with split-tree certificates.
//! - [`staircase`]: the exact staircase sequence `nu_1, ..., nu_K`.
//! - [`target_sets`]: the sets `E_j`, `E^a_{j,R}` and their constants.
//! - [`lamination`]: the three splitting constructions (lamlem, bridge, seed).
//! - [`pamap`]: piecewise-affine maps, realization, Hölder estimates, potentials.
//! - [`pipeline`]: truncated end-to-end constructions and gradient statistics.

pub mod error;
pub mod lamination;
pub mod measure;
pub mod numeric;
pub mod pamap;
pub mod pipeline;
pub mod staircase;
pub mod target_sets;
pub mod tolerances;

pub use error::{Error, Result};
pub use numeric::{ExactMatrix, Matrix, Rational, Rotation, Scalar, SquareMatrix};
