//! Closed-loop behaviours over the simulator.
//!
//! Controllers are step functions: each call looks at the current world and
//! returns the command for the next tick, or reports completion. All state
//! lives in the controller value itself.

mod autogrip;
mod path;
mod primitives;

pub use autogrip::{AutoGrip, AutoGripContext, AutoGripPhase, GripAxis};
pub use path::{follow_path, read_trace, write_trace, FollowPath, PathAbort, PathShape, PathSpec, TraceSample, TRACE_HEADER};
pub use primitives::{Convey, GoTo, Grasp, Release, RotateInGrasp, Translate};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::GripperGeometry;
use crate::geometry::Vec2;
use crate::kinematics::{command_toward, ActuatorCommand, inverse_kinematics, AppendageState, KinematicsError, Side};
use crate::sim::{material_motion, PerSide, SimError, Simulator, StepCommand, WorldEvent};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no object with id {0}")]
    UnknownObject(u32),
    #[error("object {0} is not held")]
    NotHeld(u32),
    #[error("tick budget of {0} exhausted")]
    Timeout(u64),
}

/// Why a controller gave up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FailReason {
    NoObjectFound,
    LostObject { phase: String },
    ObjectDropped { object: u32 },
    Buckling { object: u32 },
    /// The controller hit an error it cannot recover from.
    Aborted { message: String },
}

impl std::fmt::Display for FailReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailReason::NoObjectFound => write!(f, "no object found"),
            FailReason::LostObject { phase } => write!(f, "lost object during {phase}"),
            FailReason::ObjectDropped { object } => write!(f, "object {object} dropped"),
            FailReason::Buckling { object } => write!(f, "buckling while holding object {object}"),
            FailReason::Aborted { message } => write!(f, "aborted: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Progress {
    Running(StepCommand),
    Done,
    Failed(FailReason),
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;

    /// Current phase label, for controllers that have phases.
    fn phase(&self) -> Option<String> {
        None
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError>;

    /// Objects to mark released before the command from the last `step` is
    /// applied. Drained by the caller.
    fn take_release_requests(&mut self) -> Vec<u32> {
        Vec::new()
    }
}

/// Applies a controller command, honouring its release requests first.
pub fn apply_progress_command(
    sim: &mut Simulator,
    ctrl: &mut dyn Controller,
    cmd: &StepCommand,
) -> Result<Vec<WorldEvent>, SimError> {
    for id in ctrl.take_release_requests() {
        sim.request_release(id)?;
    }
    Ok(sim.step(cmd)?.to_vec())
}

/// How a controller run ended.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub ticks: u64,
    pub result: Result<(), FailReason>,
    pub events: Vec<(u64, WorldEvent)>,
}

/// Drives `ctrl` until it finishes or `max_ticks` ticks have been stepped.
pub fn run_controller(
    sim: &mut Simulator,
    ctrl: &mut dyn Controller,
    max_ticks: u64,
) -> Result<RunOutcome, ControlError> {
    let mut events = Vec::new();
    for ticks in 0..=max_ticks {
        match ctrl.step(sim)? {
            Progress::Done => return Ok(RunOutcome { ticks, result: Ok(()), events }),
            Progress::Failed(r) => return Ok(RunOutcome { ticks, result: Err(r), events }),
            Progress::Running(cmd) => {
                if ticks == max_ticks {
                    break;
                }
                let tick = sim.state().tick + 1;
                events.extend(apply_progress_command(sim, ctrl, &cmd)?.into_iter().map(|e| (tick, e)));
            }
        }
    }
    Err(ControlError::Timeout(max_ticks))
}

/// Failure implied by the events of the last tick for a held object.
pub(crate) fn hold_failure(sim: &Simulator, object: u32) -> Option<FailReason> {
    sim.state().events.iter().find_map(|e| match *e {
        WorldEvent::ObjectDropped { object: o } if o == object => Some(FailReason::ObjectDropped { object }),
        WorldEvent::Buckling { object: o, .. } if o == object => Some(FailReason::Buckling { object }),
        _ => None,
    })
}

/// Base width the simulator will use after a tick with `width_rate`.
pub(crate) fn next_base_width(sim: &Simulator, width_rate: f64) -> f64 {
    let cfg = sim.config();
    let g = &cfg.geometry;
    let st = sim.state();
    let rate = width_rate.clamp(-g.max_width_rate, g.max_width_rate);
    let w = (st.width + rate * cfg.tick_dt).clamp(g.width_min(), g.width_max());
    if w == st.width {
        st.left.a
    } else {
        g.a_for_width(w)
    }
}

/// Tip target for one appendage plus an extra inner feed (conveyance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TipGoal {
    pub tip: Vec2<f64>,
    pub extra_inner_feed: f64,
}

/// One tick of commands that puts each tip on its goal (world frame).
/// Sides without a goal hold their actuators.
pub(crate) fn tip_command(
    sim: &Simulator,
    goals: PerSide<Option<TipGoal>>,
    width_rate: f64,
) -> Result<StepCommand, KinematicsError> {
    let cfg = sim.config();
    let a = next_base_width(sim, width_rate);
    let mut cmd = StepCommand { width_rate, ..StepCommand::default() };
    for side in Side::BOTH {
        let Some(goal) = goals.get(side) else { continue };
        let state = sim.appendage(side);
        let target = inverse_kinematics(&cfg.geometry, side, goal.tip, a)?;
        *cmd.side_mut(side) = limit_rates(
            &cfg.geometry,
            command_toward(state, &target, goal.extra_inner_feed, cfg.tick_dt),
        );
    }
    Ok(cmd)
}

/// Like [`tip_command`] for both tips, with the inner feeds chosen so that
/// the tape at each contact with `object` moves by `carry` along the surface.
/// A held object then follows without being rolled.
pub(crate) fn carry_command(
    sim: &Simulator,
    tips: PerSide<Vec2<f64>>,
    width_rate: f64,
    object: u32,
    carry: Vec2<f64>,
) -> Result<StepCommand, KinematicsError> {
    let cfg = sim.config();
    let a = next_base_width(sim, width_rate);
    let mut cmd = StepCommand { width_rate, ..StepCommand::default() };
    for side in Side::BOTH {
        let state = sim.appendage(side);
        let tip = *tips.get(side);
        let target = inverse_kinematics(&cfg.geometry, side, tip, a)?;
        let extra = match sim.state().contact(object, side) {
            Some(c) => {
                let m = material_motion(cfg, state, &target, 0.0, c);
                (carry - m.displacement()).dot(m.tangent) - (target.l2 - state.l2)
            }
            None => 0.0,
        };
        *cmd.side_mut(side) = limit_rates(&cfg.geometry, command_toward(state, &target, extra, cfg.tick_dt));
    }
    Ok(cmd)
}

/// Scales all three rates together so that none exceeds its limit, keeping
/// the direction of the motion.
pub(crate) fn limit_rates(geom: &GripperGeometry<f64>, cmd: ActuatorCommand) -> ActuatorCommand {
    let ratio = [
        cmd.outer_rate.abs() / geom.max_length_rate,
        cmd.inner_rate.abs() / geom.max_length_rate,
        (cmd.outer_rate + cmd.inner_rate).abs() / geom.max_length_rate,
        cmd.theta4_rate.abs() / geom.max_theta4_rate,
    ]
    .into_iter()
    .fold(1.0, f64::max);
    if ratio == 1.0 {
        return cmd;
    }
    ActuatorCommand {
        outer_rate: cmd.outer_rate / ratio,
        inner_rate: cmd.inner_rate / ratio,
        theta4_rate: cmd.theta4_rate / ratio,
    }
}

/// Checks that `tip` is reachable by `side` at base width `a`.
pub(crate) fn reachable(sim: &Simulator, side: Side, tip: Vec2<f64>, a: f64) -> Result<AppendageState<f64>, KinematicsError> {
    inverse_kinematics(&sim.config().geometry, side, tip, a)
}

/// Number of ticks needed to cover `distance` at `speed`.
pub(crate) fn ticks_for(distance: f64, speed: f64, dt: f64) -> u64 {
    let n = (distance / (speed * dt)).ceil();
    if n.is_finite() && n > 1.0 {
        n as u64
    } else {
        1
    }
}

/// Proportional grip-width servo on the estimated contact force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceServoParams {
    /// Force setpoint (N).
    #[serde(rename = "f_desired")]
    pub f_desired: f64,
    /// Gain (mm of grip width per N of error).
    pub kp: f64,
    /// No correction while the error is within this band (N).
    pub deadband: f64,
    /// Grip-width change limit (mm/s).
    pub width_rate_limit: f64,
}

impl Default for ForceServoParams {
    fn default() -> Self {
        Self { f_desired: 1.0, kp: 2.0, deadband: 0.05, width_rate_limit: 50.0 }
    }
}

impl ForceServoParams {
    pub fn validate(&self, contact_threshold: f64) -> Result<(), String> {
        if !(self.kp > 0.0) {
            return Err("servo.kp must be > 0".into());
        }
        if !(self.f_desired > contact_threshold) {
            return Err("servo.f_desired must exceed contact_threshold".into());
        }
        if !(self.deadband >= 0.0) || !(self.width_rate_limit > 0.0) {
            return Err("servo.deadband must be >= 0 and width_rate_limit > 0".into());
        }
        Ok(())
    }
}

/// Automatic-gripping settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoGripParams {
    /// Control-beam sweep increment per tick (rad).
    pub sweep_step: f64,
    /// Tape length held during the sweeps (mm).
    pub sweep_length: f64,
    /// Tip retraction per tick while looking for loss of contact (mm).
    pub retract_step: f64,
    /// Consecutive below-threshold ticks that count as lost contact.
    pub loss_ticks: usize,
    /// Grip-width change per tick while closing onto the object (mm).
    pub close_step: f64,
    /// Contact force to grasp with (N).
    pub grasp_force: f64,
    /// Lateral clearance kept while repositioning the tips (mm).
    pub clearance: f64,
}

impl Default for AutoGripParams {
    fn default() -> Self {
        Self {
            sweep_step: 0.25f64.to_radians(),
            sweep_length: 1300.0,
            retract_step: 0.5,
            loss_ticks: 3,
            close_step: 0.25,
            grasp_force: 0.6,
            clearance: 25.0,
        }
    }
}

impl AutoGripParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sweep_step > 0.0 && self.sweep_length > 0.0 && self.retract_step > 0.0 && self.close_step > 0.0)
        {
            return Err("auto_grip steps and sweep_length must be > 0".into());
        }
        if self.loss_ticks == 0 {
            return Err("auto_grip.loss_ticks must be >= 1".into());
        }
        if !(self.grasp_force > 0.0 && self.clearance > 0.0) {
            return Err("auto_grip.grasp_force and clearance must be > 0".into());
        }
        Ok(())
    }
}

/// Speeds used by the motion primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionParams {
    /// Tip speed for goto, translate and repositioning moves (mm/s).
    pub tip_speed: f64,
    /// In-grasp rotation rate (rad/s).
    pub rotation_rate: f64,
    /// Surface speed for conveyance (mm/s).
    pub convey_speed: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self { tip_speed: 50.0, rotation_rate: 0.5, convey_speed: 50.0 }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tip_speed > 0.0 && self.rotation_rate > 0.0 && self.convey_speed > 0.0) {
            return Err("motion speeds must be > 0".into());
        }
        Ok(())
    }
}
