//! Kinematics, tape-spring mechanics and quasi-static grasp simulation for a
//! planar gripper built from two deployable tape-spring appendages.
//!
//! The geometry, kinematics and mechanics layers are generic over the scalar
//! type ([`Real`], implemented for `f32` and `f64`); the simulator, controllers
//! and file formats run on `f64`. Concrete aliases are provided below.
// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod geometry;
pub mod kinematics;
mod linalg;
pub mod mechanics;
pub mod protocol;
pub mod scalar;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod workspace;

pub use config::{load_config, save_config, ConfigError, SimConfig};
pub use kinematics::{ActuatorCommand, Boundary, KinematicsError, Side};
pub use scalar::Real;

pub type Vec2 = geometry::Vec2<f64>;
pub type Vec2f32 = geometry::Vec2<f32>;
pub type GripperGeometry = config::GripperGeometry<f64>;
pub type GripperGeometryF32 = config::GripperGeometry<f32>;
pub type SolverSettings = config::SolverSettings<f64>;
pub type AppendageState = kinematics::AppendageState<f64>;
pub type AppendageStateF32 = kinematics::AppendageState<f32>;
pub type BucklingModel = mechanics::BucklingModel<f64>;
pub type BendSpring = mechanics::BendSpring<f64>;
pub type TorqueSpline = mechanics::TorqueSpline<f64>;
pub type MechanicsModels = mechanics::MechanicsModels<f64>;
