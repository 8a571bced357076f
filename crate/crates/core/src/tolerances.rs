//! Named tolerances shared across modules.

/// Off-diagonal mass threshold for the cyclic Jacobi sweeps.
pub const JACOBI_OFFDIAG: f64 = 1e-14;
/// Maximum number of Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative symmetry tolerance for approx-mode matrices.
pub const SYMMETRY_REL: f64 = 1e-12;
/// Entrywise distance under which two approx-mode atoms are merged.
pub const MERGE_ABS: f64 = 1e-12;
/// Barycenter / weight residual accepted at an approx-mode split node.
pub const SPLIT_ABS: f64 = 1e-12;
/// Relative rank-one defect accepted at an approx-mode split node.
pub const RANK_ONE_REL: f64 = 1e-12;
/// Orthogonality and determinant tolerance for rotations.
pub const ROTATION_ABS: f64 = 1e-12;
/// Facet continuity tolerance for piecewise-affine maps.
pub const CONTINUITY_ABS: f64 = 1e-10;
/// Boundary-trace tolerance for piecewise-affine maps.
pub const BOUNDARY_ABS: f64 = 1e-10;
/// Relative volume tolerance for cell coverage.
pub const VOLUME_REL: f64 = 1e-9;
/// Slack in the midpoint convexity test.
pub const CONVEXITY_SLACK: f64 = 1e-10;
/// Loop residual above which a gradient field is rejected as non-integrable.
pub const LOOP_RESIDUAL_MAX: f64 = 1e-8;
