//! Registration and shape completion for noisy, occluded, outlier-ridden
//! 3D point clouds.
//!
//! The crate is organised around one unsupervised workflow:
//!
//! 1. [`corruption`] simulates realistic acquisition defects (missing
//!    regions, stray outliers, sensor noise) with exact ground truth.
//! 2. [`rigid`] registers a template onto a target with ICP, or with the
//!    multi-start randomized variant [`rigid::ransip`] that survives bad
//!    initial poses and heavy corruption.
//! 3. [`nonrigid`] refines the rigid pose with coherent point drift
//!    ([`nonrigid::cpd_nonrigid`]) or its Bayesian similarity-aware variant
//!    ([`nonrigid::bcpd`]), producing soft correspondences.
//! 4. [`completion`] predicts the full shape from the partial
//!    correspondences using a PPCA shape model or Gaussian-process
//!    regression over a statistical deformation model.
//! 5. [`metrics`] scores each stage against simulation ground truth and
//!    [`stats`] analyses shape variability across a registered dataset.
//!
//! [`pipeline`] wires the stages into reproducible batch runs behind the
//! `shapefit` command-line tool, and [`io`] reads and writes the on-disk
//! formats (PLY, OBJ, CSV, model containers). Everything is deterministic
//! under a caller-supplied seed.

pub mod completion;
pub mod corruption;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nonrigid;
pub mod pipeline;
pub mod rigid;
pub mod stats;
pub mod synth;

pub use geometry::{
    apply_transform, bounding_box, nearest_neighbor, Aabb, CorrespondenceMap, GeometryError,
    PointCloud, RigidTransform,
};
