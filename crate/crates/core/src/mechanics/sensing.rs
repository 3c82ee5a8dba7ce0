use serde::{Deserialize, Serialize};

use super::{MechanicsError, TorqueSpline};
use crate::kinematics::AppendageState;
use crate::scalar::Real;

/// Smallest admissible `|cos(theta1 - theta4)|` (80 degrees).
pub const MIN_LEVER_COS: f64 = 0.173_648_177_666_930_4;

/// Lever arms and angles that relate the base load cell to a contact force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeverGeometry<T> {
    pub theta1: T,
    pub theta4: T,
    pub l1: T,
    pub l2: T,
    /// Load-cell lever along the outer section.
    pub l1_prime: T,
    /// Contact distance along the inner section.
    pub l2_prime: T,
}

impl<T: Real> LeverGeometry<T> {
    pub fn from_state(state: &AppendageState<T>, l1_prime: T, l2_prime: T) -> Self {
        Self { theta1: state.theta1, theta4: state.theta4, l1: state.l1, l2: state.l2, l1_prime, l2_prime }
    }

    fn check(&self) -> Result<T, MechanicsError> {
        let slack = T::lit(1e-9);
        let ok = self.l1 > T::zero()
            && self.l2 > T::zero()
            && self.l1_prime > T::zero()
            && self.l2_prime > T::zero()
            && self.l1_prime <= self.l1 + slack
            && self.l2_prime <= self.l2 + slack;
        if !ok {
            return Err(MechanicsError::InvalidLever);
        }
        let cos = (self.theta1 - self.theta4).cos();
        if cos.abs() < T::lit(MIN_LEVER_COS) {
            return Err(MechanicsError::NearSingular { cos: cos.to_f64_lossy() });
        }
        Ok(cos)
    }
}

/// Output of the contact-force estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceEstimate {
    #[serde(rename = "F_read")]
    pub f_read: f64,
    /// Rectified estimate (never negative).
    #[serde(rename = "F2_prime")]
    pub f2_prime: f64,
    /// Signed estimate before rectification.
    #[serde(rename = "F2_prime_raw")]
    pub f2_prime_raw: f64,
    #[serde(rename = "L2_prime")]
    pub l2_prime: f64,
}

/// Bend angles at which the two internal torques are sampled: the fold at
/// the guiding ring and the rolling-joint arc.
pub fn bend_angles<T: Real>(lever: &LeverGeometry<T>, theta2: T) -> (T, T) {
    ((lever.theta1 - lever.theta4).abs(), lever.theta1 - theta2 + T::PI())
}

/// `F2' = (((F_read L1' / cos(theta1 - theta4)) + tau1) / L1 * L2 + tau2) / L2'`.
pub fn estimate_with_torques<T: Real>(
    lever: &LeverGeometry<T>,
    f_read: T,
    tau1: T,
    tau2: T,
) -> Result<T, MechanicsError> {
    let cos = lever.check()?;
    // Expanded so that unit lever ratios and a unit cosine are exact
    // multiplications: the identity case returns `f_read` bit for bit.
    let gain = (lever.l1_prime / lever.l1) * (lever.l2 / lever.l2_prime);
    Ok(f_read * gain / cos + torque_offset(lever, tau1, tau2))
}

/// Force contributed by the internal torques, independent of the reading.
fn torque_offset<T: Real>(lever: &LeverGeometry<T>, tau1: T, tau2: T) -> T {
    (tau1 * (lever.l2 / lever.l1) + tau2) / lever.l2_prime
}

/// Algebraic inverse of [`estimate_with_torques`]: the load-cell reading a
/// contact force produces.
pub fn simulate_with_torques<T: Real>(
    lever: &LeverGeometry<T>,
    contact_force: T,
    tau1: T,
    tau2: T,
) -> Result<T, MechanicsError> {
    let cos = lever.check()?;
    let gain = (lever.l1_prime / lever.l1) * (lever.l2 / lever.l2_prime);
    Ok((contact_force - torque_offset(lever, tau1, tau2)) * cos / gain)
}

fn torques<T: Real>(state: &AppendageState<T>, lever: &LeverGeometry<T>, tau: &TorqueSpline<T>) -> (T, T) {
    let (ring, joint) = bend_angles(lever, state.theta2);
    (tau.evaluate(ring).torque, tau.evaluate(joint).torque)
}

/// Estimates the contact force on the inner section from a load-cell reading.
pub fn estimate_contact_force(
    state: &AppendageState<f64>,
    f_read: f64,
    l1_prime: f64,
    l2_prime: f64,
    tau: &TorqueSpline<f64>,
) -> Result<ForceEstimate, MechanicsError> {
    let lever = LeverGeometry::from_state(state, l1_prime, l2_prime);
    let (tau1, tau2) = torques(state, &lever, tau);
    let raw = estimate_with_torques(&lever, f_read, tau1, tau2)?;
    Ok(ForceEstimate { f_read, f2_prime: raw.max(0.0), f2_prime_raw: raw, l2_prime })
}

/// The simulator's virtual load cell.
pub fn simulate_load_cell(
    state: &AppendageState<f64>,
    contact_force: f64,
    l1_prime: f64,
    l2_prime: f64,
    tau: &TorqueSpline<f64>,
) -> Result<f64, MechanicsError> {
    let lever = LeverGeometry::from_state(state, l1_prime, l2_prime);
    let (tau1, tau2) = torques(state, &lever, tau);
    simulate_with_torques(&lever, contact_force, tau1, tau2)
}
