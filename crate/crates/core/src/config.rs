//! Gripper geometry, actuation limits and simulator settings, loaded from TOML.
//!
//! Units are mm, N, rad and s throughout. Angle fields also accept strings
//! with an explicit unit suffix (`"110deg"`, `"1.9rad"`); they are stored in
//! radians.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::control::{AutoGripParams, ForceServoParams, MotionParams};
use crate::kinematics::closure_min_length;
use crate::mechanics::MechanicsModels;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AngleRepr {
    Number(f64),
    Text(String),
}

fn parse_angle(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("deg") {
        (n, std::f64::consts::PI / 180.0)
    } else if let Some(n) = t.strip_suffix("rad") {
        (n, 1.0)
    } else {
        return Err(format!("angle {t:?} needs a number or a 'deg'/'rad' suffix"));
    };
    num.trim()
        .parse::<f64>()
        .map(|v| v * scale)
        .map_err(|e| format!("bad angle {t:?}: {e}"))
}

pub(crate) fn angle<'de, D, T>(de: D) -> Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: Real,
{
    let rad = match AngleRepr::deserialize(de)? {
        AngleRepr::Number(v) => v,
        AngleRepr::Text(s) => parse_angle(&s).map_err(serde::de::Error::custom)?,
    };
    Ok(T::lit(rad))
}

/// Fixed mounting geometry and actuation limits of one appendage; the other
/// appendage is its mirror image across `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct GripperGeometry<T> {
    /// Vertical drop from the outer to the inner extruder exit.
    pub b: T,
    /// Pivot offset of the angular control beam (up, then left by `d`).
    pub c: T,
    pub d: T,
    /// Pivot to guiding ring.
    pub l4: T,
    /// No-load rolling-joint radius.
    pub r0: T,
    /// Distance between the two outer extruder exits.
    pub outer_extruder_spacing: T,
    pub a_min: T,
    pub a_max: T,
    #[serde(deserialize_with = "angle")]
    pub theta4_min: T,
    #[serde(deserialize_with = "angle")]
    pub theta4_max: T,
    pub length_min: T,
    pub length_max: T,
    /// Per-extruder feed limit (mm/s).
    pub max_length_rate: T,
    /// Control-beam limit (rad/s).
    #[serde(deserialize_with = "angle")]
    pub max_theta4_rate: T,
    /// Grip-width limit (mm/s).
    pub max_width_rate: T,
}

impl<T: Real> Default for GripperGeometry<T> {
    fn default() -> Self {
        Self {
            b: T::lit(20.0),
            c: T::lit(80.0),
            d: T::lit(30.0),
            l4: T::lit(100.0),
            r0: T::lit(15.0),
            outer_extruder_spacing: T::lit(260.0),
            a_min: T::lit(40.0),
            a_max: T::lit(120.0),
            theta4_min: T::lit((-20.0f64).to_radians()),
            theta4_max: T::lit(110.0f64.to_radians()),
            length_min: T::lit(300.0),
            length_max: T::lit(1524.0),
            max_length_rate: T::lit(250.0),
            max_theta4_rate: T::lit(1.5),
            max_width_rate: T::lit(50.0),
        }
    }
}

impl<T: Real> GripperGeometry<T> {
    pub fn a_mid(&self) -> T {
        (self.a_min + self.a_max) * T::lit(0.5)
    }

    /// Grip width at the base for a per-appendage base width `a`.
    pub fn width_for(&self, a: T) -> T {
        self.outer_extruder_spacing - a - a
    }

    /// Per-appendage base width for a grip width `w` (symmetric rack travel).
    pub fn a_for_width(&self, w: T) -> T {
        (self.outer_extruder_spacing - w) * T::lit(0.5)
    }

    pub fn width_min(&self) -> T {
        self.width_for(self.a_max)
    }

    pub fn width_max(&self) -> T {
        self.width_for(self.a_min)
    }

    /// Upper bound on tip distance from its outer extruder exit.
    pub fn reach_bound(&self) -> T {
        let exit = (self.a_max * self.a_max + self.b * self.b).sqrt();
        (self.length_max + self.r0 + self.r0 + exit) * T::lit(0.5)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("c", self.c),
            ("d", self.d),
            ("l4", self.l4),
            ("r0", self.r0),
            ("outer_extruder_spacing", self.outer_extruder_spacing),
            ("a_min", self.a_min),
            ("a_max", self.a_max),
            ("length_min", self.length_min),
            ("length_max", self.length_max),
            ("max_length_rate", self.max_length_rate),
            ("max_theta4_rate", self.max_theta4_rate),
            ("max_width_rate", self.max_width_rate),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite()) {
                return Err(invalid(format!("geometry.{name} must be > 0")));
            }
        }
        if !(self.b >= T::zero() && self.b.is_finite()) {
            return Err(invalid("geometry.b must be >= 0"));
        }
        if !(self.a_min < self.a_max) {
            return Err(invalid("geometry.a_min must be < a_max"));
        }
        if !(self.theta4_min < self.theta4_max) {
            return Err(invalid("geometry.theta4_min must be < theta4_max"));
        }
        if !(self.theta4_max - self.theta4_min < T::TAU()) {
            return Err(invalid("geometry theta4 range must span less than a full turn"));
        }
        if !(self.length_min < self.length_max) {
            return Err(invalid("geometry.length_min must be < length_max"));
        }
        if !(self.a_max * T::lit(2.0) < self.outer_extruder_spacing) {
            return Err(invalid("geometry.outer_extruder_spacing must exceed 2 * a_max"));
        }
        if !(self.length_min > T::TAU() * self.r0) {
            return Err(invalid("geometry.length_min must exceed the longest possible rolling arc 2*pi*r0"));
        }
        // The triangle has to close (with a 1 mm margin) everywhere in the actuator box.
        const N_THETA: usize = 33;
        const N_A: usize = 9;
        for i in 0..N_THETA {
            let t4 = self.theta4_min
                + (self.theta4_max - self.theta4_min) * T::lit(i as f64 / (N_THETA - 1) as f64);
            for j in 0..N_A {
                let a = self.a_min + (self.a_max - self.a_min) * T::lit(j as f64 / (N_A - 1) as f64);
                match closure_min_length(self, t4, a) {
                    Some(m) if self.length_min > m + T::one() => {}
                    _ => {
                        return Err(invalid(format!(
                            "geometry.length_min too short to close the triangle at theta4 = {:.4} rad, a = {:.2} mm",
                            t4.to_f64_lossy(),
                            a.to_f64_lossy()
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Forward-kinematics solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct SolverSettings<T> {
    /// Largest accepted closure residual (mm).
    pub residual_tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        // f32 cannot resolve sub-nanometre residuals on metre-scale lengths.
        let tol = if T::epsilon() < T::lit(1e-10) { 1e-10 } else { 2e-3 };
        Self { residual_tol: T::lit(tol), max_iter: 60 }
    }
}

fn default_dt() -> f64 {
    0.01
}

fn default_threshold() -> f64 {
    0.25
}

/// Everything the simulator and controllers need, immutable after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub tick_dt: f64,
    /// Contact force that counts as touching (N).
    #[serde(default = "default_threshold")]
    pub contact_threshold: f64,
    #[serde(default)]
    pub geometry: GripperGeometry<f64>,
    #[serde(default)]
    pub solver: SolverSettings<f64>,
    #[serde(default)]
    pub mechanics: MechanicsModels<f64>,
    #[serde(default)]
    pub servo: ForceServoParams,
    #[serde(default)]
    pub auto_grip: AutoGripParams,
    #[serde(default)]
    pub motion: MotionParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tick_dt: default_dt(),
            contact_threshold: default_threshold(),
            geometry: GripperGeometry::default(),
            solver: SolverSettings::default(),
            mechanics: MechanicsModels::default(),
            servo: ForceServoParams::default(),
            auto_grip: AutoGripParams::default(),
            motion: MotionParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tick_dt > 0.0 && self.tick_dt.is_finite()) {
            return Err(invalid("tick_dt must be > 0"));
        }
        if !(self.contact_threshold > 0.0) {
            return Err(invalid("contact_threshold must be > 0"));
        }
        if !(self.solver.residual_tol > 0.0) {
            return Err(invalid("solver.residual_tol must be > 0"));
        }
        if self.solver.max_iter == 0 {
            return Err(invalid("solver.max_iter must be >= 1"));
        }
        self.geometry.validate()?;
        self.mechanics.validate().map_err(|e| invalid(format!("mechanics: {e}")))?;
        self.servo.validate(self.contact_threshold).map_err(invalid)?;
        self.auto_grip.validate().map_err(invalid)?;
        self.motion.validate().map_err(invalid)?;
        Ok(())
    }

    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|span| line_col(text, span.start))
                .unwrap_or((0, 0));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map(|i| offset - i).unwrap_or(offset + 1);
    (line, column)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    SimConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &SimConfig, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    std::fs::write(path, cfg.to_toml_string())
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

/// A TOML fragment that sets one model of the `[mechanics]` table, for
/// pasting into a configuration file.
pub fn mechanics_fragment<M: Serialize>(model: &str, value: &M) -> Result<String, ConfigError> {
    let value = toml::Value::try_from(value).map_err(|e| invalid(format!("{model}: {e}")))?;
    let mut mechanics = toml::Table::new();
    mechanics.insert(model.to_string(), value);
    let mut root = toml::Table::new();
    root.insert("mechanics".into(), toml::Value::Table(mechanics));
    Ok(toml::to_string_pretty(&root).expect("table serialises"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SimConfig::default().validate().unwrap();
        assert_eq!(SimConfig::default().geometry.r0, 15.0);
    }

    #[test]
    fn angles_accept_suffixes() {
        assert!((parse_angle("90deg").unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(parse_angle(" 1.5 rad").unwrap(), 1.5);
        assert!(parse_angle("90").is_err());
    }

    #[test]
    fn inverted_length_limits_rejected() {
        let text = "[geometry]\nb = 20.0\nc = 80.0\nd = 30.0\nl4 = 100.0\nr0 = 15.0\n\
            outer_extruder_spacing = 260.0\na_min = 40.0\na_max = 120.0\n\
            theta4_min = \"-20deg\"\ntheta4_max = \"110deg\"\nlength_min = 1600.0\n\
            length_max = 1524.0\nmax_length_rate = 250.0\nmax_theta4_rate = 1.5\nmax_width_rate = 50.0\n";
        let err = SimConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(ref m) if m.contains("length_min")), "{err}");
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = SimConfig::from_toml_str("tick_dt = 0.01\ncontact_threshold = = 3\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn short_length_min_rejected() {
        let mut cfg = SimConfig::default();
        cfg.geometry.length_min = 100.0;
        assert!(cfg.validate().is_err());
    }
}
