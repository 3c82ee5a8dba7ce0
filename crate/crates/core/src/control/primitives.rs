//! Named manipulation primitives: goto, grasp, translate, rotate, convey and
//! release.

use std::collections::VecDeque;

use super::{
    carry_command, hold_failure, next_base_width, reachable, ticks_for, tip_command, ControlError, Controller, FailReason,
    ForceServoParams, Progress, TipGoal,
};
use crate::geometry::Vec2;
use crate::kinematics::{ActuatorCommand, KinematicsError, Side};
use crate::sim::{ContactReport, PerSide, Segment, SimObject, Simulator, StepCommand};

/// A straight-line move of the tips and/or the grip width.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Leg {
    pub tips: PerSide<Option<Vec2<f64>>>,
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ActiveLeg {
    from_tips: PerSide<Vec2<f64>>,
    from_width: f64,
    to_tips: PerSide<Vec2<f64>>,
    to_width: f64,
    ticks: u64,
    done: u64,
}

/// Runs legs back to back, interpolating linearly within each. Tips without
/// a goal are held in place while the width changes.
#[derive(Debug, Clone, Default)]
pub(crate) struct LegRunner {
    legs: VecDeque<Leg>,
    active: Option<ActiveLeg>,
}

impl LegRunner {
    pub fn new(legs: impl IntoIterator<Item = Leg>) -> Self {
        Self { legs: legs.into_iter().collect(), active: None }
    }

    /// Command for the next tick, or `None` once every leg is complete.
    pub fn step(&mut self, sim: &Simulator) -> Result<Option<StepCommand>, KinematicsError> {
        let cfg = sim.config();
        let dt = cfg.tick_dt;
        if self.active.is_none() {
            let Some(leg) = self.legs.pop_front() else { return Ok(None) };
            let from_tips = PerSide { left: sim.world_tip(Side::Left), right: sim.world_tip(Side::Right) };
            let to_tips = PerSide {
                left: leg.tips.left.unwrap_or(from_tips.left),
                right: leg.tips.right.unwrap_or(from_tips.right),
            };
            let from_width = sim.state().width;
            let to_width = leg.width.unwrap_or(from_width);
            let speed = cfg.motion.tip_speed;
            let ticks = ticks_for(from_tips.left.distance(to_tips.left), speed, dt)
                .max(ticks_for(from_tips.right.distance(to_tips.right), speed, dt))
                .max(ticks_for((to_width - from_width).abs(), 0.8 * cfg.geometry.max_width_rate, dt));
            self.active = Some(ActiveLeg { from_tips, from_width, to_tips, to_width, ticks, done: 0 });
        }
        let leg = self.active.as_mut().expect("active leg");
        leg.done += 1;
        let f = leg.done as f64 / leg.ticks as f64;
        let goal = |s: Side| {
            Some(TipGoal { tip: leg.from_tips.get(s).lerp(*leg.to_tips.get(s), f), extra_inner_feed: 0.0 })
        };
        let width = leg.from_width + (leg.to_width - leg.from_width) * f;
        let rate = (width - sim.state().width) / dt;
        let cmd = tip_command(sim, PerSide { left: goal(Side::Left), right: goal(Side::Right) }, rate)?;
        if leg.done >= leg.ticks {
            self.active = None;
        }
        Ok(Some(cmd))
    }
}

fn object(sim: &Simulator, id: u32) -> Result<SimObject, ControlError> {
    sim.state().object(id).copied().ok_or(ControlError::UnknownObject(id))
}

/// Grasp axis for a tip grasp at `center` with the given tip distances:
/// unit `u` along the bisector of the two inner sections and `nu = perp_cw(u)`
/// pointing from the left tip to the right one. Balancing the axis this way
/// puts both contacts equally far inside their tip arcs.
pub(crate) fn balanced_axis(
    sim: &Simulator,
    center: Vec2<f64>,
    reach: PerSide<f64>,
    a: f64,
) -> Result<(Vec2<f64>, Vec2<f64>), KinematicsError> {
    let base = Vec2::new(0.0, -sim.config().geometry.b);
    let mut u = (center - base).normalized().unwrap_or(Vec2::new(0.0, 1.0));
    for _ in 0..20 {
        let nu = u.perp_cw();
        let left = reachable(sim, Side::Left, center - nu * reach.left, a)?;
        let right = reachable(sim, Side::Right, center + nu * reach.right, a)?;
        let sum = Side::Left.map_dir(left.inner_dir()) + Side::Right.map_dir(right.inner_dir());
        let Some(next) = sum.normalized() else { break };
        let moved = next.distance(u);
        u = next;
        if moved < 1e-13 {
            break;
        }
    }
    Ok((u, u.perp_cw()))
}

/// Per-side penetration that produces `force` in a centred grasp.
pub(crate) fn grasp_penetration(sim: &Simulator, force: f64) -> Result<f64, ControlError> {
    let spring = &sim.config().mechanics.spring;
    spring
        .displacement_for_force(force)
        .map(|d| d * 0.5)
        .map_err(|e| ControlError::InvalidParams(format!("grasp force: {e}")))
}

/// Tip positions for a tip grasp of `obj` with the given penetration, on a
/// balanced axis.
pub(crate) fn grasp_tips(
    sim: &Simulator,
    obj: &SimObject,
    penetration: f64,
    a: f64,
) -> Result<PerSide<Vec2<f64>>, KinematicsError> {
    let r = sim.config().geometry.r0;
    let c = obj.pose.position;
    let mut nu = approach_lateral(sim, c);
    // The support depends on the axis for non-round shapes.
    for _ in 0..5 {
        let reach = obj.support(nu) + r - penetration;
        nu = balanced_axis(sim, c, PerSide { left: reach, right: reach }, a)?.1;
    }
    let reach = obj.support(nu) + r - penetration;
    Ok(PerSide { left: c - nu * reach, right: c + nu * reach })
}

fn approach_lateral(sim: &Simulator, p: Vec2<f64>) -> Vec2<f64> {
    let base = Vec2::new(0.0, -sim.config().geometry.b);
    (p - base).normalized().unwrap_or(Vec2::new(0.0, 1.0)).perp_cw()
}

fn check_reachable(sim: &Simulator, tips: &PerSide<Vec2<f64>>, a: f64) -> Result<(), ControlError> {
    for side in Side::BOTH {
        reachable(sim, side, *tips.get(side), a)?;
    }
    Ok(())
}

/// Moves one tip in a straight line to a world target.
pub struct GoTo {
    runner: LegRunner,
}

impl GoTo {
    pub fn new(sim: &Simulator, side: Side, target: Vec2<f64>) -> Result<Self, ControlError> {
        if !target.is_finite() {
            return Err(ControlError::InvalidParams("target must be finite".into()));
        }
        reachable(sim, side, target, sim.appendage(side).a)?;
        let mut leg = Leg::default();
        *leg.tips.get_mut(side) = Some(target);
        Ok(Self { runner: LegRunner::new([leg]) })
    }
}

impl Controller for GoTo {
    fn name(&self) -> &'static str {
        "goto"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        Ok(match self.runner.step(sim)? {
            Some(cmd) => Progress::Running(cmd),
            None => Progress::Done,
        })
    }
}

/// Forms a tip grasp on a known object: tips to a clearance pose on either
/// side, then inward to the penetration that gives the grasp force.
pub struct Grasp {
    object: u32,
    runner: LegRunner,
}

impl Grasp {
    pub fn new(sim: &Simulator, id: u32, force: Option<f64>) -> Result<Self, ControlError> {
        let obj = object(sim, id)?;
        let force = force.unwrap_or(sim.config().auto_grip.grasp_force);
        if !(force >= sim.config().contact_threshold) {
            return Err(ControlError::InvalidParams("grasp force below the contact threshold".into()));
        }
        let clearance = sim.config().auto_grip.clearance;
        let a = sim.appendage(Side::Left).a;
        let pre = grasp_tips(sim, &obj, -clearance, a)?;
        let grip = grasp_tips(sim, &obj, grasp_penetration(sim, force)?, a)?;
        let legs = [
            Leg { tips: PerSide { left: Some(pre.left), right: Some(pre.right) }, width: None },
            Leg { tips: PerSide { left: Some(grip.left), right: Some(grip.right) }, width: None },
        ];
        Ok(Self { object: id, runner: LegRunner::new(legs) })
    }
}

impl Controller for Grasp {
    fn name(&self) -> &'static str {
        "grasp"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        if let Some(cmd) = self.runner.step(sim)? {
            return Ok(Progress::Running(cmd));
        }
        let held = object(sim, self.object)?.held;
        Ok(if held { Progress::Done } else { Progress::Failed(FailReason::LostObject { phase: "grasp".into() }) })
    }
}

/// Moves a held object along a straight line. The tips keep their distances
/// from the object centre and orbit it so that the grasp axis stays balanced
/// between the inner sections; for round objects the interference is then
/// exactly constant.
pub struct Translate {
    object: u32,
    step: Vec2<f64>,
    targets: Vec<PerSide<Vec2<f64>>>,
    next: usize,
}

impl Translate {
    pub fn new(sim: &Simulator, id: u32, target: Vec2<f64>) -> Result<Self, ControlError> {
        let obj = object(sim, id)?;
        if !obj.held {
            return Err(ControlError::NotHeld(id));
        }
        if !target.is_finite() {
            return Err(ControlError::InvalidParams("target must be finite".into()));
        }
        let start = obj.pose.position;
        let delta = target - start;
        if delta.norm() == 0.0 {
            return Ok(Self { object: id, step: Vec2::zero(), targets: Vec::new(), next: 0 });
        }
        let cfg = sim.config();
        let reach = PerSide {
            left: sim.world_tip(Side::Left).distance(start),
            right: sim.world_tip(Side::Right).distance(start),
        };
        let n = ticks_for(delta.norm(), cfg.motion.tip_speed, cfg.tick_dt);
        let a = sim.appendage(Side::Left).a;
        let targets = (1..=n)
            .map(|k| {
                let c = start.lerp(target, k as f64 / n as f64);
                let (_, nu) = balanced_axis(sim, c, reach, a)?;
                let tips = PerSide { left: c - nu * reach.left, right: c + nu * reach.right };
                check_reachable(sim, &tips, a)?;
                Ok(tips)
            })
            .collect::<Result<Vec<_>, ControlError>>()?;
        Ok(Self { object: id, step: delta * (1.0 / n as f64), targets, next: 0 })
    }
}

impl Controller for Translate {
    fn name(&self) -> &'static str {
        "translate"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        if let Some(r) = hold_failure(sim, self.object) {
            return Ok(Progress::Failed(r));
        }
        let Some(tips) = self.targets.get(self.next) else {
            return Ok(Progress::Done);
        };
        let cmd = carry_command(sim, *tips, 0.0, self.object, self.step)?;
        self.next += 1;
        Ok(Progress::Running(cmd))
    }
}

/// World-frame direction in which tape slides at a contact for a positive
/// inner feed.
fn slide_tangent(sim: &Simulator, c: &ContactReport) -> Vec2<f64> {
    let app = sim.appendage(c.side);
    let local = match c.segment {
        Segment::InnerSection => app.inner_dir(),
        Segment::TipArc => Vec2::from_angle(app.theta2 - std::f64::consts::FRAC_PI_2 + c.param).perp_ccw(),
    };
    c.side.map_dir(local)
}

/// Rotates a held object in place by driving the two contact surfaces in
/// opposite directions, keeping each appendage's length through conveyance.
/// With a servo, the tip gap follows the force error.
pub struct RotateInGrasp {
    object: u32,
    remaining: f64,
    servo: Option<ForceServoParams>,
    started: bool,
}

impl RotateInGrasp {
    pub fn new(sim: &Simulator, id: u32, angle: f64, servo: Option<ForceServoParams>) -> Result<Self, ControlError> {
        let obj = object(sim, id)?;
        if !angle.is_finite() {
            return Err(ControlError::InvalidParams("angle must be finite".into()));
        }
        if angle != 0.0 && !obj.held {
            return Err(ControlError::NotHeld(id));
        }
        if let Some(s) = &servo {
            s.validate(sim.config().contact_threshold).map_err(ControlError::InvalidParams)?;
        }
        Ok(Self { object: id, remaining: angle, servo, started: false })
    }

    /// Angle still to be commanded (rad).
    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    /// Grip-width correction for a measured force: `-Kp (F_desired - F)`,
    /// rate limited, zero inside the deadband.
    pub fn servo_correction(servo: &ForceServoParams, measured: f64, dt: f64) -> f64 {
        let err = servo.f_desired - measured;
        if err.abs() <= servo.deadband {
            return 0.0;
        }
        let lim = servo.width_rate_limit * dt;
        (-servo.kp * err).clamp(-lim, lim)
    }
}

impl Controller for RotateInGrasp {
    fn name(&self) -> &'static str {
        "rotate"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        if self.started {
            if let Some(r) = hold_failure(sim, self.object) {
                return Ok(Progress::Failed(r));
            }
        }
        if self.remaining == 0.0 {
            return Ok(Progress::Done);
        }
        let obj = object(sim, self.object)?;
        let st = sim.state();
        let (Some(cl), Some(cr)) = (st.contact(obj.id, Side::Left), st.contact(obj.id, Side::Right)) else {
            return Ok(Progress::Failed(FailReason::ObjectDropped { object: obj.id }));
        };
        if !obj.held {
            return Ok(Progress::Failed(FailReason::ObjectDropped { object: obj.id }));
        }
        let cfg = sim.config();
        let dt = cfg.tick_dt;
        let n = (cl.normal - cr.normal).normalized().expect("opposing contacts");
        let t = n.perp_ccw();
        let h = obj.support(n);
        let step = cfg.motion.rotation_rate * dt;
        let dphi = self.remaining.clamp(-step, step);
        let q = dphi * h;
        let feed_l = -q / slide_tangent(sim, cl).dot(t);
        let feed_r = q / slide_tangent(sim, cr).dot(t);

        let correction = match &self.servo {
            Some(s) => {
                let est = |c: &ContactReport| c.estimate.map(|e| e.f2_prime).unwrap_or(0.0);
                Self::servo_correction(s, 0.5 * (est(cl) + est(cr)), dt)
            }
            None => 0.0,
        };
        let cmd = if correction == 0.0 {
            StepCommand {
                left: ActuatorCommand::conveyance(feed_l, dt),
                right: ActuatorCommand::conveyance(feed_r, dt),
                width_rate: 0.0,
            }
        } else {
            let a = next_base_width(sim, 0.0);
            let tips = PerSide { left: sim.world_tip(Side::Left), right: sim.world_tip(Side::Right) };
            let goal_l = tips.left - n * (correction * 0.5);
            let goal_r = tips.right + n * (correction * 0.5);
            let mut goals = PerSide {
                left: Some(TipGoal { tip: goal_l, extra_inner_feed: feed_l }),
                right: Some(TipGoal { tip: goal_r, extra_inner_feed: feed_r }),
            };
            // Inner-section contacts slide by the whole inner feed, so the
            // section-length change is taken out of the extra feed.
            for (side, c) in [(Side::Left, cl), (Side::Right, cr)] {
                if c.segment == Segment::InnerSection {
                    let tip = goals.get(side).expect("goal").tip;
                    let target = reachable(sim, side, tip, a)?;
                    let g = goals.get_mut(side).as_mut().expect("goal");
                    g.extra_inner_feed -= target.l2 - sim.appendage(side).l2;
                }
            }
            tip_command(sim, goals, 0.0)?
        };
        self.remaining -= dphi;
        if self.remaining.abs() < 1e-15 {
            self.remaining = 0.0;
        }
        self.started = true;
        Ok(Progress::Running(cmd))
    }
}

/// Moves the inner surfaces of both appendages by the same amount without
/// changing their shape. Positive distances move toward the base.
pub struct Convey {
    remaining: f64,
    watch: Vec<u32>,
    started: bool,
}

impl Convey {
    pub fn new(sim: &Simulator, distance: f64) -> Result<Self, ControlError> {
        if !distance.is_finite() {
            return Err(ControlError::InvalidParams("distance must be finite".into()));
        }
        // Objects touched but not yet held (spawned this tick) count too.
        let st = sim.state();
        let watch = st
            .objects
            .iter()
            .filter(|o| o.held || st.contacts.iter().any(|c| c.object == o.id))
            .map(|o| o.id)
            .collect();
        Ok(Self { remaining: distance, watch, started: false })
    }
}

impl Controller for Convey {
    fn name(&self) -> &'static str {
        "convey"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        if self.started {
            if let Some(r) = self.watch.iter().find_map(|&id| hold_failure(sim, id)) {
                return Ok(Progress::Failed(r));
            }
        }
        if self.remaining == 0.0 {
            return Ok(Progress::Done);
        }
        let dt = sim.config().tick_dt;
        let step = sim.config().motion.convey_speed * dt;
        let d = self.remaining.clamp(-step, step);
        self.remaining -= d;
        if self.remaining.abs() < 1e-12 {
            self.remaining = 0.0;
        }
        self.started = true;
        let c = ActuatorCommand::conveyance(-d, dt);
        Ok(Progress::Running(StepCommand { left: c, right: c, width_rate: 0.0 }))
    }
}

/// Lets go of held objects by backing both tips away from them.
pub struct Release {
    objects: Vec<u32>,
    requested: bool,
    runner: Option<LegRunner>,
}

impl Release {
    /// Releases `target`, or every held object.
    pub fn new(sim: &Simulator, target: Option<u32>) -> Result<Self, ControlError> {
        let objects: Vec<u32> = match target {
            Some(id) => {
                if !object(sim, id)?.held {
                    return Err(ControlError::NotHeld(id));
                }
                vec![id]
            }
            None => sim.state().objects.iter().filter(|o| o.held).map(|o| o.id).collect(),
        };
        Ok(Self { objects, requested: false, runner: None })
    }
}

impl Controller for Release {
    fn name(&self) -> &'static str {
        "release"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        if self.runner.is_none() {
            let clearance = sim.config().auto_grip.clearance;
            let mut leg = Leg::default();
            for side in Side::BOTH {
                let away = self
                    .objects
                    .iter()
                    .filter_map(|&id| sim.state().contact(id, side))
                    .fold(Vec2::zero(), |acc, c| acc + c.normal)
                    .normalized();
                if let Some(dir) = away {
                    *leg.tips.get_mut(side) = Some(sim.world_tip(side) - dir * clearance);
                }
            }
            self.runner = Some(LegRunner::new([leg]));
        }
        if let Some(cmd) = self.runner.as_mut().expect("runner").step(sim)? {
            return Ok(Progress::Running(cmd));
        }
        let still = self.objects.iter().any(|&id| sim.state().object(id).is_some_and(|o| o.held));
        Ok(if still { Progress::Failed(FailReason::LostObject { phase: "release".into() }) } else { Progress::Done })
    }

    fn take_release_requests(&mut self) -> Vec<u32> {
        if std::mem::replace(&mut self.requested, true) {
            Vec::new()
        } else {
            self.objects.clone()
        }
    }
}
