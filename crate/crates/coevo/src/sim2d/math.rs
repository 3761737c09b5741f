//! Minimal planar vector math for the x–z simulation plane.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// 2D vector in the vertical simulation plane. `x` is the locomotion axis,
/// `z` points up against gravity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub fn new(x: f64, z: f64) -> Vec2 {
        Vec2 { x, z }
    }

    /// Unit vector at `angle` radians from the +x axis, counter-clockwise.
    pub fn from_angle(angle: f64) -> Vec2 {
        Vec2 { x: angle.cos(), z: angle.sin() }
    }

    pub fn dot(self, rhs: Vec2) -> f64 {
        self.x * rhs.x + self.z * rhs.z
    }

    /// Scalar 2D cross product (out-of-plane component of the 3D cross).
    pub fn cross(self, rhs: Vec2) -> f64 {
        self.x * rhs.z - self.z * rhs.x
    }

    /// Velocity of a point at offset `self` on a body spinning at `omega`:
    /// omega x r in 2D.
    pub fn angular_velocity_at(self, omega: f64) -> Vec2 {
        Vec2 { x: -omega * self.z, z: omega * self.x }
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2 { x: self.x * c - self.z * s, z: self.x * s + self.z * c }
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.z)
    }

    pub fn length_squared(self) -> f64 {
        self.x * self.x + self.z * self.z
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.z + rhs.z)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.z += rhs.z;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.z - rhs.z)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.z -= rhs.z;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.z * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_is_counter_clockwise() {
        let v = Vec2::new(1.0, 0.0).rotated(std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(v.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_sign_matches_right_hand_rule() {
        assert!(Vec2::new(1.0, 0.0).cross(Vec2::new(0.0, 1.0)) > 0.0);
    }

    #[test]
    fn point_velocity_from_spin() {
        // r along +x, positive spin -> point moves up
        let v = Vec2::new(1.0, 0.0).angular_velocity_at(2.0);
        assert_relative_eq!(v.x, 0.0);
        assert_relative_eq!(v.z, 2.0);
    }
}
