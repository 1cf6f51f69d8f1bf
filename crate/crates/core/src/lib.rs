//! Patient-specific 4D multi-structure heart geometry from sparse 2D slices.
//!
//! The library pairs an explicit-implicit representation (a deformable
//! tetrahedral grid carrying per-class signed distance values and vertex
//! offsets) with direct gradient-based optimization. A dense reference frame
//! fixes the grid ([`fit::fit_static`]); per-frame motion is then recovered by
//! deforming the grid vertices until its slice contours match whatever 2D
//! observations are available, from a full stack down to a single plane
//! ([`fit::fit_motion`]).
//!
//! Modules:
//! - [`tetgrid`]: grid construction, marching tetrahedra, analytic surface
//!   Jacobians
//! - [`meshops`]: surface sampling, chamfer distance with gradients, volumes,
//!   voxelization, Dice, mesh SDF queries
//! - [`slicegeom`]: oriented slice planes, mesh/plane contouring, nearest-slice
//!   selection, observation assembly
//! - [`phantom`]: deterministic synthetic 4D heart sequences with known
//!   ground truth
//! - [`fit`]: the two-stage optimizer and the evaluation report

pub mod error;
pub mod fit;
pub mod meshops;
pub mod phantom;
pub mod slicegeom;
pub mod tetgrid;

pub use error::CoreError;

/// Result alias used across the crate.
pub type Result<T, E = CoreError> = std::result::Result<T, E>;
