//! Planar pose and angle helpers shared across the crate.
//!
//! Conventions used everywhere: world frame is x right, y up, yaw
//! counterclockwise from +x; the robot frame has +x forward.

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

/// Planar robot pose. `yaw` is kept wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.yaw)
    }

    /// Maps a robot-frame point into the world frame.
    pub fn to_world(&self, local: Vector2<f64>) -> Vector2<f64> {
        self.position() + self.rotation() * local
    }

    /// Maps a world-frame point into the robot frame.
    pub fn to_local(&self, world: Vector2<f64>) -> Vector2<f64> {
        Rotation2::new(-self.yaw) * (world - self.position())
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
