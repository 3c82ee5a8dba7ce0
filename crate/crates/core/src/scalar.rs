use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar the kinematics and mechanics are written against.
///
/// Implemented for `f32` and `f64`. Literals are lifted with [`Real::lit`].
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Wraps an angle into `(-pi, pi]`.
    fn wrap_angle(self) -> Self {
        let two_pi = Self::TAU();
        let mut a = self % two_pi;
        if a > Self::PI() {
            a = a - two_pi;
        } else if a <= -Self::PI() {
            a = a + two_pi;
        }
        a
    }
}

impl Real for f32 {}
impl Real for f64 {}
