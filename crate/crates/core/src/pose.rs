//! Planar rigid transforms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A rigid 2D transform: rotate by `theta`, then translate by `(tx, ty)`.
///
/// Poses are named by the frames they connect: a keypoint pose maps the
/// feature's local frame into the image, a map-image pose maps image pixels
/// into the world. Units are map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { theta: 0.0, tx: 0.0, ty: 0.0 };

    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        Self { theta: wrap_angle(theta), tx, ty }
    }

    pub fn from_translation(tx: f64, ty: f64) -> Self {
        Self { theta: 0.0, tx, ty }
    }

    pub fn from_rotation(theta: f64) -> Self {
        Self::new(theta, 0.0, 0.0)
    }

    #[inline]
    pub fn translation(&self) -> (f64, f64) {
        (self.tx, self.ty)
    }

    /// `a.compose(b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 {
            theta: wrap_angle(self.theta + other.theta),
            tx: c * other.tx - s * other.ty + self.tx,
            ty: s * other.tx + c * other.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 { theta: wrap_angle(-self.theta), tx: -(c * self.tx + s * self.ty), ty: -(-s * self.tx + c * self.ty) }
    }

    #[inline]
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    /// Rotates a vector without translating it.
    #[inline]
    pub fn rotate(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * x - s * y, s * x + c * y)
    }

    /// Euclidean distance between the two translations.
    pub fn translation_distance(&self, other: &Pose2) -> f64 {
        (self.tx - other.tx).hypot(self.ty - other.ty)
    }

    /// Absolute wrapped rotation difference in radians.
    pub fn rotation_distance(&self, other: &Pose2) -> f64 {
        wrap_angle(self.theta - other.theta).abs()
    }

    /// Row-major 3x3 homogeneous matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.theta.sin_cos();
        [[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.tx.is_finite() && self.ty.is_finite()
    }
}
