//! Global localization from ground-texture images.
//!
//! The pipeline has an offline and an online half. Offline, overlapping
//! frames of a ground surface are stitched into a map ([`stitch`]), a small
//! random subset of each frame's keypoints is PCA-compressed and placed in the
//! world frame ([`mapdb`]), and the result is indexed by keypoint scale
//! ([`index`]). Online, a single query image is matched against that index and
//! every match votes for where the query image sits in the world; the densest
//! vote cell is handed to RANSAC for the final rigid pose ([`locate`]).
//!
//! [`synth`] provides procedural textures with exact ground truth and
//! [`eval`] runs the success-rate sweeps on top of it.

pub mod error;
pub mod eval;
pub mod feature;
pub mod features;
pub mod index;
pub mod locate;
pub mod mapdb;
pub mod pca;
pub mod pose;
pub mod raster;
pub mod rigid;
pub mod stitch;
pub mod synth;
mod timing;

pub use error::{Error, Result};
pub use feature::{Descriptor, ImageFeatures, Keypoint, WorldFeature};
pub use pose::Pose2;
pub use raster::Raster;

/// Ground distance covered by one map pixel, in millimetres.
pub const DEFAULT_MM_PER_PIXEL: f64 = 0.16;

/// Length of an unprojected gradient-histogram descriptor.
pub const RAW_DESCRIPTOR_DIM: usize = 128;
