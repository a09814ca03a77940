//! Non-learning building blocks for whole-torso MR segmentation pipelines.
//!
//! The crate covers everything around a segmentation network: NIfTI volume
//! I/O and resampling, stitching of axial stacks, pseudo-CT intensity
//! remapping, label catalogs, connectivity clean-up with priority merging,
//! coarse body-region localizers, vertebra instance counting, memory-bounded
//! sliding-window fusion around a pluggable patch oracle, and evaluation
//! (Dice, ASSD, bootstrap confidence intervals).

pub mod error;
pub mod metrics;
pub mod postproc;
pub mod pseudoct;
pub mod quadrants;
pub mod schema;
pub mod stats;
pub mod stitch;
pub mod tiler;
pub mod vertebrae;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{AnyVolume, GridSpec, Image, LabelMap, Mask, Volume, VolumeKind, Voxel};

/// Version string embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
