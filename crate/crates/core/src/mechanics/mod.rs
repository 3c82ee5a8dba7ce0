//! Parametric tape-spring mechanics: buckling limit, bend-joint spring,
//! internal bending torque and the base load-cell force estimator.

mod buckling;
mod sensing;
mod spring;
mod torque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buckling::{fit_buckling, BucklingFit, BucklingModel};
pub use sensing::{
    estimate_contact_force, estimate_with_torques, simulate_load_cell, simulate_with_torques,
    ForceEstimate, LeverGeometry, MIN_LEVER_COS,
};
pub use spring::{fit_spring, BendSpring, SpringBranch, SpringFit};
pub use torque::{fit_torque, TorqueSample, TorqueSpline};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanicsError {
    #[error("length {length:.3} mm is within 1 mm of the buckling offset {offset:.3} mm")]
    BelowOffset { length: f64, offset: f64 },
    #[error("degenerate fit data: {0}")]
    DegenerateData(String),
    #[error("value {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("lever term cos(theta1 - theta4) = {cos:.4} too close to zero")]
    NearSingular { cos: f64 },
    #[error("contact lever arms must be positive and within their sections")]
    InvalidLever,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("malformed samples: {0}")]
    Malformed(String),
}

pub const BUCKLING_HEADER: [&str; 2] = ["length_mm", "force_N"];
pub const SPRING_HEADER: [&str; 2] = ["displacement_mm", "force_N"];
pub const TORQUE_HEADER: [&str; 2] = ["angle_rad", "torque_Nmm"];

/// Reads two-column samples from CSV with exactly the given header.
pub fn read_samples<R: std::io::Read>(input: R, header: [&str; 2]) -> Result<Vec<(f64, f64)>, MechanicsError> {
    let bad = MechanicsError::Malformed;
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let found = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(bad(format!("expected header {}, found {}", header.join(","), found.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = k + 2;
        if rec.len() != 2 {
            return Err(bad(format!("line {line}: expected 2 fields, found {}", rec.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("line {line}: bad number {s:?}")))
        };
        out.push((num(&rec[0])?, num(&rec[1])?));
    }
    Ok(out)
}

/// Optional load-dependent rolling radius `r(F) = r0 - slope * F`, floored at
/// a tenth of `r0`. A zero slope (the default) keeps the radius constant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadRadius<T> {
    #[serde(default)]
    pub slope: T,
}

impl<T: Real> LoadRadius<T> {
    pub fn radius(&self, r0: T, force: T) -> T {
        (r0 - self.slope * force.max(T::zero())).max(r0 * T::lit(0.1))
    }
}

/// The full set of mechanics models used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct MechanicsModels<T> {
    pub buckling: BucklingModel<T>,
    pub spring: BendSpring<T>,
    #[serde(default = "TorqueSpline::zero")]
    pub torque: TorqueSpline<T>,
    #[serde(default)]
    pub radius: LoadRadius<T>,
}

impl<T: Real> Default for MechanicsModels<T> {
    fn default() -> Self {
        Self {
            buckling: BucklingModel::default(),
            spring: BendSpring::default(),
            torque: TorqueSpline::zero(),
            radius: LoadRadius::default(),
        }
    }
}

impl<T: Real> MechanicsModels<T> {
    pub fn validate(&self) -> Result<(), MechanicsError> {
        self.buckling.validate()?;
        self.spring.validate()?;
        self.torque.validate()?;
        if !(self.radius.slope >= T::zero()) {
            return Err(MechanicsError::InvalidModel("radius slope must be >= 0".into()));
        }
        Ok(())
    }
}
