//! Instance reconstruction from unordered, cluttered point-cloud scans using
//! a CAD model as a proxy.
//!
//! The pipeline runs in stages:
//!
//! 1. [`codebook`]: the CAD model is sampled and every ordered pair of
//!    oriented samples is stored under its quantized point pair feature.
//! 2. [`detector`]: each scan votes, per reference point, in a local
//!    (model point × rotation angle) space; the maxima are clustered into
//!    pose hypotheses.
//! 3. [`verifier`]: hypotheses are refined coarse-to-fine against a distance
//!    field, scored by model-point visibility and checked for normal
//!    agreement. Only confident poses survive.
//! 4. [`pose_graph`]: segmented scans are dropped into a voxel index over
//!    model space; shared voxels give pairwise overlaps and a hysteresis rule
//!    selects the edges.
//! 5. [`refine`]: all absolute camera poses are refined jointly with a
//!    robust point-to-plane Levenberg-Marquardt.
//!
//! [`synth`] produces deterministic synthetic scans for testing and
//! [`pipeline`] strings the stages together.

pub mod codebook;
pub mod config;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod pose_graph;
pub mod ppf;
pub mod refine;
pub mod synth;
pub mod union_find;
pub mod verifier;

mod par;

pub use error::{Error, Result};
pub use geometry::{OrientedPointCloud, Pose, TriMesh, Vec3};
