//! Planar vectors in millimetres.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A point or displacement in the plane (mm).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Unit vector at `angle` from +x, counter-clockwise.
    pub fn from_angle(angle: T) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    /// Returns `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    /// Rotated +90 degrees.
    pub fn perp_ccw(self) -> Self {
        Self::new(-self.y, self.x)
    }

    /// Rotated -90 degrees, i.e. the matrix `[[0, 1], [-1, 0]]` applied to `self`.
    pub fn perp_cw(self) -> Self {
        Self::new(self.y, -self.x)
    }

    pub fn rotated(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Reflection across the `x = 0` line.
    pub fn mirror_x(self) -> Self {
        Self::new(-self.x, self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Self, t: T) -> Self {
        self + (other - self) * t
    }

    pub fn cast<U: Real>(self) -> Vec2<U> {
        Vec2::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()))
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Real> AddAssign for Vec2<T> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Real> SubAssign for Vec2<T> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perpendiculars() {
        let v = Vec2::new(1.0_f64, 0.0);
        assert_eq!(v.perp_ccw(), Vec2::new(0.0, 1.0));
        assert_eq!(v.perp_cw(), Vec2::new(0.0, -1.0));
    }

    #[test]
    fn wrap_angle_range() {
        for k in -20..20 {
            let a = (k as f64) * 0.7;
            let w = a.wrap_angle();
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            assert!(((a - w) / std::f64::consts::TAU).fract().abs() < 1e-9
                || ((a - w) / std::f64::consts::TAU).fract().abs() > 1.0 - 1e-9);
        }
    }
}
