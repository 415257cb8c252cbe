//! Keypoints, descriptors and world-frame features.

use serde::{Deserialize, Serialize};

use crate::pose::Pose2;

/// A scale-space keypoint in image pixel coordinates (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian sigma of the detection scale, in pixels of the input image.
    pub scale: f32,
    /// Dominant gradient direction in `(-π, π]`.
    pub orientation: f32,
    /// Absolute interpolated DoG value at the extremum.
    pub response: f32,
}

impl Keypoint {
    /// Pose of the keypoint's local frame in the image frame.
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.orientation as f64, self.x as f64, self.y as f64)
    }
}

/// A real-valued descriptor; 128 entries before projection, `k` after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt() as f32
    }

    pub fn distance_squared(&self, other: &Descriptor) -> f32 {
        squared_distance(&self.0, &other.0)
    }
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Keypoints of one image paired index-for-index with their descriptors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl ImageFeatures {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// A database feature placed in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFeature {
    /// Feature frame to world frame.
    pub pose: Pose2,
    pub scale: f32,
    pub descriptor: Descriptor,
    pub image_id: u32,
}
