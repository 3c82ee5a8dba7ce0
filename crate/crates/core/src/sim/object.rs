use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

/// Rigid planar object outline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Circle { radius: f64 },
    /// Major axis along the pose orientation.
    Ellipse { semi_major: f64, semi_minor: f64 },
}

impl Shape {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Shape::Circle { radius } if radius > 0.0 && radius.is_finite() => Ok(()),
            Shape::Circle { radius } => Err(format!("circle radius must be > 0, got {radius}")),
            Shape::Ellipse { semi_major, semi_minor }
                if semi_minor > 0.0 && semi_major >= semi_minor && semi_major.is_finite() =>
            {
                Ok(())
            }
            Shape::Ellipse { .. } => Err("ellipse needs semi_major >= semi_minor > 0".into()),
        }
    }

    /// Support function: largest extent along unit direction `n` for an
    /// object rotated by `orientation`.
    pub fn support(&self, orientation: f64, n: Vec2<f64>) -> f64 {
        match *self {
            Shape::Circle { radius } => radius,
            Shape::Ellipse { semi_major, semi_minor } => {
                let e1 = Vec2::from_angle(orientation);
                let (p, q) = (n.dot(e1) * semi_major, n.cross(e1) * semi_minor);
                (p * p + q * q).sqrt()
            }
        }
    }

    /// Boundary point extremal along `n`, relative to the centre.
    pub fn support_point(&self, orientation: f64, n: Vec2<f64>) -> Vec2<f64> {
        match *self {
            Shape::Circle { radius } => n * radius,
            Shape::Ellipse { semi_major, semi_minor } => {
                let e1 = Vec2::from_angle(orientation);
                let e2 = e1.perp_ccw();
                let h = self.support(orientation, n);
                (e1 * (semi_major * semi_major * n.dot(e1)) + e2 * (semi_minor * semi_minor * n.dot(e2))) * (1.0 / h)
            }
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Circle { radius } => radius,
            Shape::Ellipse { semi_major, .. } => semi_major,
        }
    }

    pub fn is_round(&self) -> bool {
        match *self {
            Shape::Circle { .. } => true,
            Shape::Ellipse { semi_major, semi_minor } => semi_major == semi_minor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub position: Vec2<f64>,
    /// Accumulated (unwrapped) rotation in radians.
    #[serde(default)]
    pub orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: u32,
    pub shape: Shape,
    pub pose: Pose,
    /// Gripped between both appendages and moving with them.
    pub held: bool,
}

impl SimObject {
    pub fn support(&self, n: Vec2<f64>) -> f64 {
        self.shape.support(self.pose.orientation, n)
    }

    pub fn support_point(&self, n: Vec2<f64>) -> Vec2<f64> {
        self.pose.position + self.shape.support_point(self.pose.orientation, n)
    }

    /// Conservative overlap test used for spawn checks and invariants.
    pub fn overlaps(&self, other: &SimObject) -> bool {
        let d = self.pose.position - other.pose.position;
        let dist = d.norm();
        let Some(n) = d.normalized() else { return true };
        dist < self.support(n) + other.support(n) - 1e-9
    }
}
