//! One steerable world: the simulator plus the command state a client sees.
//!
//! Commands are applied between ticks. At most one primitive runs at a time;
//! while none runs, the persistent jog rates drive the actuators. The service
//! and the scenario runner both drive a `Session`, so a client session and
//! its replay produce the same ticks.

use thiserror::Error;

use crate::config::SimConfig;
use crate::control::{
    AutoGrip, ControlError, Controller, Convey, FailReason, ForceServoParams, GoTo, Grasp, Progress, Release,
    RotateInGrasp, Translate,
};
use crate::geometry::Vec2;
use crate::kinematics::{ActuatorCommand, KinematicsError};
use crate::protocol::{ActivePrimitive, Command, ErrorCode, PrimitiveCall, PrimitiveEvent, SessionEvent, StateFrame};
use crate::sim::{InitialPose, SimError, Simulator, StepCommand};

/// A rejected command. The world is unchanged.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct CommandError {
    pub code: ErrorCode,
    pub message: String,
}

impl CommandError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<ControlError> for CommandError {
    fn from(e: ControlError) -> Self {
        let code = match &e {
            ControlError::Kinematics(_) => ErrorCode::OutOfWorkspace,
            ControlError::Sim(SimError::UnknownObject(_)) | ControlError::UnknownObject(_) => ErrorCode::UnknownObject,
            ControlError::Sim(SimError::Kinematics(_)) => ErrorCode::OutOfWorkspace,
            ControlError::Sim(_) | ControlError::Timeout(_) => ErrorCode::Internal,
            ControlError::InvalidParams(_) => ErrorCode::InvalidParams,
            ControlError::NotHeld(_) => ErrorCode::NotHeld,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SimError> for CommandError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::UnknownObject(_) => ErrorCode::UnknownObject,
            SimError::InvalidObject(_) | SimError::Pose(_) => ErrorCode::InvalidParams,
            SimError::Kinematics(_) => ErrorCode::OutOfWorkspace,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<KinematicsError> for CommandError {
    fn from(e: KinematicsError) -> Self {
        Self::new(ErrorCode::OutOfWorkspace, e.to_string())
    }
}

struct Active {
    name: &'static str,
    ctrl: Box<dyn Controller>,
}

pub struct Session {
    config: SimConfig,
    initial: InitialPose,
    sim: Simulator,
    active: Option<Active>,
    jog: StepCommand,
    servo: ForceServoParams,
}

impl Session {
    pub fn new(config: SimConfig, initial: InitialPose) -> Result<Self, SimError> {
        let sim = Simulator::new(config.clone(), &initial)?;
        let servo = config.servo;
        Ok(Self { config, initial, sim, active: None, jog: StepCommand::default(), servo })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn servo(&self) -> &ForceServoParams {
        &self.servo
    }

    pub fn jog(&self) -> &StepCommand {
        &self.jog
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none()
    }

    pub fn active_primitive(&self) -> Option<ActivePrimitive> {
        self.active.as_ref().map(|a| ActivePrimitive { name: a.name.to_string(), phase: a.ctrl.phase() })
    }

    pub fn frame(&self) -> StateFrame {
        StateFrame::new(&self.config, self.sim.state(), self.active_primitive())
    }

    pub fn snapshot(&self) -> String {
        self.sim.snapshot()
    }

    /// Zeroes the persistent jog rates.
    pub fn stop_jog(&mut self) {
        self.jog = StepCommand::default();
    }

    fn ensure_idle(&self) -> Result<(), CommandError> {
        match &self.active {
            Some(a) => Err(CommandError::new(ErrorCode::Busy, format!("primitive {} is running", a.name))),
            None => Ok(()),
        }
    }

    fn start(&mut self, name: &'static str, ctrl: Box<dyn Controller>) {
        self.jog = StepCommand::default();
        self.active = Some(Active { name, ctrl });
    }

    /// Applies a command before the next tick.
    pub fn apply(&mut self, command: &Command) -> Result<(), CommandError> {
        let g = &self.config.geometry;
        match command {
            Command::Jog { side, outer_rate, inner_rate, theta4_rate, width_rate } => {
                self.ensure_idle()?;
                let rates = [*outer_rate, *inner_rate, *theta4_rate, *width_rate];
                if !rates.iter().all(|r| r.is_finite()) {
                    return Err(CommandError::new(ErrorCode::InvalidParams, "jog rates must be finite"));
                }
                let cmd = ActuatorCommand { outer_rate: *outer_rate, inner_rate: *inner_rate, theta4_rate: *theta4_rate };
                *self.jog.side_mut(*side) = cmd.clamped(g);
                self.jog.width_rate = width_rate.clamp(-g.max_width_rate, g.max_width_rate);
            }
            Command::Goto { side, x, y } => {
                self.ensure_idle()?;
                let ctrl = GoTo::new(&self.sim, *side, Vec2::new(*x, *y))?;
                self.start("goto", Box::new(ctrl));
            }
            Command::Primitive { name, params } => {
                self.ensure_idle()?;
                let call = PrimitiveCall::parse(*name, params)
                    .map_err(|e| CommandError::new(ErrorCode::InvalidParams, format!("{} params: {e}", name.as_str())))?;
                let sim = &self.sim;
                let ctrl: Box<dyn Controller> = match call {
                    PrimitiveCall::Grasp(p) => Box::new(Grasp::new(sim, p.object, p.force)?),
                    PrimitiveCall::Release(p) => Box::new(Release::new(sim, p.object)?),
                    PrimitiveCall::Translate(p) => Box::new(Translate::new(sim, p.object, Vec2::new(p.x, p.y))?),
                    PrimitiveCall::Rotate(p) => {
                        let servo = p.feedback.then_some(self.servo);
                        Box::new(RotateInGrasp::new(sim, p.object, p.angle, servo)?)
                    }
                    PrimitiveCall::Convey(p) => Box::new(Convey::new(sim, p.distance)?),
                    PrimitiveCall::AutoGrip => Box::new(AutoGrip::new(sim)?),
                };
                self.start(name.as_str(), ctrl);
            }
            Command::SetServo(p) => {
                p.validate(self.config.contact_threshold).map_err(|m| CommandError::new(ErrorCode::InvalidParams, m))?;
                self.servo = *p;
            }
            Command::SpawnObject { shape, pose } => {
                self.sim.spawn(*shape, *pose)?;
            }
            Command::Reset {} => {
                self.sim = Simulator::new(self.config.clone(), &self.initial)?;
                self.active = None;
                self.jog = StepCommand::default();
                self.servo = self.config.servo;
            }
            Command::Subscribe { rate_hz } => {
                if !(*rate_hz > 0.0 && rate_hz.is_finite()) {
                    return Err(CommandError::new(ErrorCode::InvalidParams, "rate_hz must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// Advances the world one tick and reports what happened. A primitive
    /// that finished on the previous tick is reported at the start of this
    /// one, and the tick is then driven by the jog rates.
    pub fn tick(&mut self) -> Result<Vec<SessionEvent>, SimError> {
        let mut events = Vec::new();
        let mut finish = |name: &str, result: Result<(), FailReason>| {
            events.push(SessionEvent::Primitive(match result {
                Ok(()) => PrimitiveEvent::PrimitiveDone { name: name.to_string() },
                Err(reason) => PrimitiveEvent::PrimitiveFailed { name: name.to_string(), reason },
            }));
        };
        let mut cmd = self.jog;
        if let Some(active) = self.active.as_mut() {
            match active.ctrl.step(&self.sim) {
                Ok(Progress::Running(c)) => {
                    for id in active.ctrl.take_release_requests() {
                        self.sim.request_release(id)?;
                    }
                    cmd = c;
                }
                Ok(Progress::Done) => {
                    finish(active.name, Ok(()));
                    self.active = None;
                }
                Ok(Progress::Failed(reason)) => {
                    finish(active.name, Err(reason));
                    self.active = None;
                }
                Err(e) => {
                    finish(active.name, Err(FailReason::Aborted { message: e.to_string() }));
                    self.active = None;
                }
            }
        }
        let world = match self.sim.step(&cmd) {
            Ok(w) => w.to_vec(),
            Err(e) => match self.active.take() {
                // A failing primitive command aborts the primitive; the tick
                // still happens, with the actuators held.
                Some(active) => {
                    finish(active.name, Err(FailReason::Aborted { message: e.to_string() }));
                    self.sim.step(&StepCommand::default())?.to_vec()
                }
                None => return Err(e),
            },
        };
        events.extend(world.into_iter().map(SessionEvent::World));
        Ok(events)
    }
}
