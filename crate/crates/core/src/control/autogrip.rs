//! Automatic gripping of a single unknown object from force sensing alone.
//!
//! Both appendages sweep inward until the force estimate crosses the contact
//! threshold. The two contact normals locate the object roughly; the inner
//! sections are then set parallel to the line from the base centre to that
//! point and closed onto the object, which gives its width. Rolling the left
//! tip back until contact is lost fixes its distance along the axis, and the
//! tips finally close on the estimated pose.

use serde::{Deserialize, Serialize};

use super::primitives::{grasp_penetration, Leg, LegRunner};
use super::{next_base_width, reachable, ticks_for, tip_command, ControlError, Controller, FailReason, Progress, TipGoal};
use crate::geometry::Vec2;
use crate::kinematics::Side;
use crate::sim::{PerSide, Simulator, StepCommand};

/// Phases in execution order. `Failed` may follow any phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoGripPhase {
    SweepLeft,
    SweepRight,
    OpenAndParallelize,
    CloseWidth,
    RetractUntilLost,
    MoveToGrasp,
    Grasped,
    Failed,
}

impl AutoGripPhase {
    pub fn label(self) -> &'static str {
        match self {
            AutoGripPhase::SweepLeft => "sweep_left",
            AutoGripPhase::SweepRight => "sweep_right",
            AutoGripPhase::OpenAndParallelize => "open_and_parallelize",
            AutoGripPhase::CloseWidth => "close_width",
            AutoGripPhase::RetractUntilLost => "retract_until_lost",
            AutoGripPhase::MoveToGrasp => "move_to_grasp",
            AutoGripPhase::Grasped => "grasped",
            AutoGripPhase::Failed => "failed",
        }
    }
}

/// Line from the base centre through the estimated object position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripAxis {
    pub point: Vec2<f64>,
    /// Unit direction.
    pub direction: Vec2<f64>,
}

impl GripAxis {
    /// Unit normal pointing from the left appendage toward the right one.
    pub fn lateral(&self) -> Vec2<f64> {
        self.direction.perp_cw()
    }

    pub fn at(&self, along: f64, lateral: f64) -> Vec2<f64> {
        self.point + self.direction * along + self.lateral() * lateral
    }
}

/// Everything the auto-grip has measured so far. Each field is set when the
/// phase that measures it completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoGripContext {
    pub phase: AutoGripPhase,
    /// Contact points found by the sweeps.
    pub sweep_contacts: PerSide<Option<Vec2<f64>>>,
    /// Intersection of the sweep contact normals.
    pub coarse_center: Option<Vec2<f64>>,
    pub axis: Option<GripAxis>,
    /// Object extent across the axis (mm).
    pub object_width: Option<f64>,
    /// Object centre distance along the axis from its base point (mm).
    pub object_distance: Option<f64>,
    /// Object centre offset across the axis (mm).
    pub lateral_offset: Option<f64>,
    pub center_estimate: Option<Vec2<f64>>,
    /// Contact threshold on the force estimate (N).
    pub threshold: f64,
    pub failure: Option<FailReason>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepStage {
    Rotate,
    Extend,
    Scan,
    BackOff { extra: u32 },
}

/// Inner-section line of one appendage: its angle in the local frame and the
/// distance of the tip from the inner exit along it.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Line {
    theta2: f64,
    along: f64,
}

#[derive(Debug, Clone, Copy)]
struct LineMove {
    from: PerSide<Line>,
    to: PerSide<Line>,
    from_width: f64,
    to_width: f64,
    ticks: u64,
    done: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LastContact {
    penetration: f64,
    tip: Vec2<f64>,
}

#[derive(Debug, Clone)]
enum Stage {
    Sweep { side: Side, stage: SweepStage },
    Open(LineMove),
    Close { lines: PerSide<Line> },
    Retract { below: usize, last: Option<LastContact>, lateral: f64 },
    Grasp(LegRunner),
    Finished,
}

pub struct AutoGrip {
    ctx: AutoGripContext,
    stage: Stage,
    release: Vec<u32>,
}

impl AutoGrip {
    pub fn new(sim: &Simulator) -> Result<Self, ControlError> {
        sim.config().auto_grip.validate().map_err(ControlError::InvalidParams)?;
        let ctx = AutoGripContext {
            phase: AutoGripPhase::SweepLeft,
            sweep_contacts: PerSide::default(),
            coarse_center: None,
            axis: None,
            object_width: None,
            object_distance: None,
            lateral_offset: None,
            center_estimate: None,
            threshold: sim.config().contact_threshold,
            failure: None,
        };
        Ok(Self { ctx, stage: Stage::Sweep { side: Side::Left, stage: SweepStage::Rotate }, release: Vec::new() })
    }

    pub fn context(&self) -> &AutoGripContext {
        &self.ctx
    }

    fn fail(&mut self, reason: FailReason) -> Progress {
        self.ctx.phase = AutoGripPhase::Failed;
        self.ctx.failure = Some(reason.clone());
        self.stage = Stage::Finished;
        Progress::Failed(reason)
    }

    fn lost(&mut self) -> Progress {
        let phase = self.ctx.phase.label().to_string();
        self.fail(FailReason::LostObject { phase })
    }

    fn sweep(&mut self, sim: &Simulator, side: Side, stage: SweepStage) -> Result<Progress, ControlError> {
        let cfg = sim.config();
        let g = &cfg.geometry;
        let p = &cfg.auto_grip;
        let dt = cfg.tick_dt;
        let mut cmd = StepCommand::default();
        let next = match stage {
            SweepStage::Rotate | SweepStage::Extend => {
                // Both appendages are parked outward and extended before the
                // first scan, so the idle one stays clear of the grip region.
                let rotate = stage == SweepStage::Rotate;
                let mut settled = true;
                for s in Side::BOTH {
                    let st = sim.appendage(s);
                    let c = cmd.side_mut(s);
                    if rotate {
                        let rest = g.theta4_max - st.theta4;
                        c.theta4_rate = (rest / dt).min(0.9 * g.max_theta4_rate);
                        settled &= rest <= 0.0;
                    } else {
                        let rest = p.sweep_length.clamp(g.length_min, g.length_max) - st.length;
                        let lim = 0.9 * g.max_length_rate;
                        c.outer_rate = (rest / dt).clamp(-lim, lim);
                        settled &= rest == 0.0;
                    }
                }
                match (settled, rotate) {
                    (false, _) => stage,
                    (true, true) => return self.sweep(sim, side, SweepStage::Extend),
                    (true, false) => return self.sweep(sim, side, SweepStage::Scan),
                }
            }
            SweepStage::Scan => {
                let sensed = sim.state().sensing.get(side);
                let st = sim.appendage(side);
                if sensed.f2_prime >= cfg.contact_threshold {
                    let u = side.map_dir(st.inner_dir());
                    *self.ctx.sweep_contacts.get_mut(side) =
                        Some(side.to_world(g, st.inner_exit(g)) + u * sensed.l2_prime);
                    return self.sweep(sim, side, SweepStage::BackOff { extra: 0 });
                }
                if st.theta4 <= g.theta4_min {
                    return self.end_sweep(sim, side);
                }
                cmd.side_mut(side).theta4_rate = -p.sweep_step / dt;
                stage
            }
            SweepStage::BackOff { extra } => {
                if sim.state().contacts_on(side).next().is_none() {
                    if extra >= 2 {
                        return self.end_sweep(sim, side);
                    }
                    cmd.side_mut(side).theta4_rate = p.sweep_step / dt;
                    SweepStage::BackOff { extra: extra + 1 }
                } else {
                    cmd.side_mut(side).theta4_rate = p.sweep_step / dt;
                    stage
                }
            }
        };
        self.stage = Stage::Sweep { side, stage: next };
        Ok(Progress::Running(cmd))
    }

    fn end_sweep(&mut self, sim: &Simulator, side: Side) -> Result<Progress, ControlError> {
        if side == Side::Left {
            self.ctx.phase = AutoGripPhase::SweepRight;
            return self.sweep(sim, Side::Right, SweepStage::Scan);
        }
        let (Some(pl), Some(pr)) = (self.ctx.sweep_contacts.left, self.ctx.sweep_contacts.right) else {
            return Ok(self.fail(FailReason::NoObjectFound));
        };
        let g = &sim.config().geometry;
        let normal = |s: Side| s.map_dir(sim.appendage(s).inner_dir().perp_cw());
        let (nl, nr) = (normal(Side::Left), normal(Side::Right));
        let det = nl.cross(nr);
        let center = if det.abs() > 1e-9 { pl + nl * ((pr - pl).cross(nr) / det) } else { pl.lerp(pr, 0.5) };
        let a = sim.appendage(Side::Left).a;
        if Side::BOTH.iter().any(|&s| reachable(sim, s, center, a).is_err()) || !center.is_finite() {
            return Ok(self.fail(FailReason::NoObjectFound));
        }
        self.ctx.coarse_center = Some(center);
        let base = Vec2::new(0.0, -g.b);
        let Some(u) = (center - base).normalized().filter(|u| u.y > 0.0) else {
            return Ok(self.fail(FailReason::NoObjectFound));
        };
        let axis = GripAxis { point: base, direction: u };
        self.ctx.axis = Some(axis);

        let p = &sim.config().auto_grip;
        let radius = pl.distance(center).max(pr.distance(center));
        let spacing = (1.5 * pl.distance(pr)).max(2.0 * radius + p.clearance);
        let width = (spacing / u.y).clamp(g.width_min(), g.width_max());
        let to = PerSide { left: target_line(sim, &axis, Side::Left, width, center, radius),
            right: target_line(sim, &axis, Side::Right, width, center, radius),
        };
        let from = PerSide { left: current_line(sim, Side::Left), right: current_line(sim, Side::Right) };
        let from_width = sim.state().width;
        let cfg = sim.config();
        let speed = cfg.motion.tip_speed;
        let mut ticks = ticks_for((width - from_width).abs(), 0.8 * g.max_width_rate, cfg.tick_dt);
        for s in Side::BOTH {
            let (f, t) = (from.get(s), to.get(s));
            let sweep = angle_diff(t.theta2, f.theta2).abs() * f.along.max(t.along);
            ticks = ticks.max(ticks_for(sweep + (t.along - f.along).abs(), speed, cfg.tick_dt));
            if reachable(sim, s, line_tip(sim, s, t, g.a_for_width(width)), g.a_for_width(width)).is_err() {
                return Ok(self.fail(FailReason::NoObjectFound));
            }
        }
        self.ctx.phase = AutoGripPhase::OpenAndParallelize;
        self.stage = Stage::Open(LineMove { from, to, from_width, to_width: width, ticks, done: 0 });
        self.step(sim)
    }

    fn open(&mut self, sim: &Simulator, mut mv: LineMove) -> Result<Progress, ControlError> {
        if mv.done >= mv.ticks {
            self.ctx.phase = AutoGripPhase::CloseWidth;
            self.stage = Stage::Close { lines: mv.to };
            return self.step(sim);
        }
        mv.done += 1;
        let f = mv.done as f64 / mv.ticks as f64;
        let lerp = |s: Side| {
            let (a, b) = (mv.from.get(s), mv.to.get(s));
            Line { theta2: a.theta2 + angle_diff(b.theta2, a.theta2) * f, along: a.along + (b.along - a.along) * f }
        };
        let width = mv.from_width + (mv.to_width - mv.from_width) * f;
        let Ok(cmd) = line_command(sim, PerSide { left: lerp(Side::Left), right: lerp(Side::Right) }, width) else {
            return Ok(self.lost());
        };
        self.stage = Stage::Open(mv);
        Ok(Progress::Running(cmd))
    }

    fn close(&mut self, sim: &Simulator, lines: PerSide<Line>) -> Result<Progress, ControlError> {
        let cfg = sim.config();
        let g = &cfg.geometry;
        let st = sim.state();
        let pen = |s: Side| grasp_penetration(sim, st.sensing.get(s).f2_prime);
        let touching = |s: Side| st.sensing.get(s).f2_prime >= cfg.contact_threshold;
        if touching(Side::Left) && touching(Side::Right) {
            let axis = self.ctx.axis.expect("axis set before closing");
            let (Ok(pl), Ok(pr)) = (pen(Side::Left), pen(Side::Right)) else {
                return Ok(self.lost());
            };
            let spacing = st.width * axis.direction.y;
            self.ctx.object_width = Some(spacing + pl + pr);
            self.ctx.phase = AutoGripPhase::RetractUntilLost;
            self.release = st.sensing.left.object.into_iter().collect();
            self.stage = Stage::Retract { below: 0, last: None, lateral: 0.5 * (pr - pl) };
            return self.step(sim);
        }
        let width = st.width - cfg.auto_grip.close_step;
        if width < g.width_min() {
            return Ok(self.lost());
        }
        let Ok(cmd) = line_command(sim, lines, width) else {
            return Ok(self.lost());
        };
        Ok(Progress::Running(cmd))
    }

    fn retract(
        &mut self,
        sim: &Simulator,
        below: usize,
        last: Option<LastContact>,
        lateral: f64,
    ) -> Result<Progress, ControlError> {
        let cfg = sim.config();
        let p = &cfg.auto_grip;
        let st = sim.state();
        let axis = self.ctx.axis.expect("axis set before retracting");
        let left = st.sensing.left;
        let tip = sim.world_tip(Side::Left);
        let (below, last, lateral) = if left.f2_prime >= cfg.contact_threshold {
            let Ok(pl) = grasp_penetration(sim, left.f2_prime) else { return Ok(self.lost()) };
            // The right contact stays on its straight section, so its
            // penetration places the object across the axis.
            let right = st.sensing.right.f2_prime;
            let lateral = match grasp_penetration(sim, right) {
                Ok(pr) if right >= cfg.contact_threshold => {
                    let half = 0.5 * self.ctx.object_width.expect("width measured");
                    0.5 * st.width * axis.direction.y + pr - half
                }
                _ => lateral,
            };
            (0, Some(LastContact { penetration: pl, tip }), lateral)
        } else {
            (below + 1, last, lateral)
        };
        if below >= p.loss_ticks {
            let Some(last) = last else { return Ok(self.lost()) };
            let width = self.ctx.object_width.expect("width measured");
            let r = cfg.geometry.r0;
            let rel = last.tip - axis.point;
            let (along, across) = (rel.dot(axis.direction), rel.dot(axis.lateral()));
            let reach = 0.5 * width + r - last.penetration;
            let arg = reach * reach - (lateral - across) * (lateral - across);
            let distance = along + if arg > 0.0 { arg.sqrt() } else { 0.0 };
            let center = axis.at(distance, lateral);
            self.ctx.object_distance = Some(distance);
            self.ctx.lateral_offset = Some(lateral);
            self.ctx.center_estimate = Some(center);
            return self.begin_grasp(sim, center);
        }
        let goal = tip - axis.direction * p.retract_step;
        let a = sim.appendage(Side::Left).a;
        let Ok(target) = reachable(sim, Side::Left, goal, a) else {
            return Ok(self.lost());
        };
        // Zero inner feed: the tip rolls back along the object without
        // dragging it.
        let extra = -(target.l2 - sim.appendage(Side::Left).l2);
        let goals = PerSide { left: Some(TipGoal { tip: goal, extra_inner_feed: extra }), right: None };
        let cmd = tip_command(sim, goals, 0.0)?;
        self.stage = Stage::Retract { below, last, lateral };
        Ok(Progress::Running(cmd))
    }

    fn begin_grasp(&mut self, sim: &Simulator, center: Vec2<f64>) -> Result<Progress, ControlError> {
        let cfg = sim.config();
        let axis = self.ctx.axis.expect("axis set");
        let nu = axis.lateral();
        let half = 0.5 * self.ctx.object_width.expect("width measured");
        let r = cfg.geometry.r0;
        let clearance = cfg.auto_grip.clearance;
        let Ok(pg) = grasp_penetration(sim, cfg.auto_grip.grasp_force) else {
            return Ok(self.lost());
        };
        let at = |reach: f64| PerSide { left: Some(center - nu * reach), right: Some(center + nu * reach) };
        let back = Leg {
            tips: PerSide { left: None, right: Some(sim.world_tip(Side::Right) + nu * clearance) },
            width: None,
        };
        let legs = [back, Leg { tips: at(half + r + clearance), width: None }, Leg { tips: at(half + r - pg), width: None }];
        let a = sim.appendage(Side::Left).a;
        for leg in &legs {
            for s in Side::BOTH {
                if let Some(t) = leg.tips.get(s) {
                    if reachable(sim, s, *t, a).is_err() {
                        self.ctx.phase = AutoGripPhase::MoveToGrasp;
                        return Ok(self.lost());
                    }
                }
            }
        }
        self.ctx.phase = AutoGripPhase::MoveToGrasp;
        self.stage = Stage::Grasp(LegRunner::new(legs));
        self.step(sim)
    }

    fn grasp(&mut self, sim: &Simulator, mut runner: LegRunner) -> Result<Progress, ControlError> {
        if let Some(cmd) = runner.step(sim)? {
            self.stage = Stage::Grasp(runner);
            return Ok(Progress::Running(cmd));
        }
        let st = sim.state();
        let held = st.sensing.left.object.and_then(|id| st.object(id)).is_some_and(|o| o.held);
        if !held {
            return Ok(self.lost());
        }
        self.ctx.phase = AutoGripPhase::Grasped;
        self.stage = Stage::Finished;
        Ok(Progress::Done)
    }
}

impl Controller for AutoGrip {
    fn name(&self) -> &'static str {
        "auto_grip"
    }

    fn phase(&self) -> Option<String> {
        Some(self.ctx.phase.label().to_string())
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        match self.stage.clone() {
            Stage::Sweep { side, stage } => self.sweep(sim, side, stage),
            Stage::Open(mv) => self.open(sim, mv),
            Stage::Close { lines } => self.close(sim, lines),
            Stage::Retract { below, last, lateral } => self.retract(sim, below, last, lateral),
            Stage::Grasp(runner) => self.grasp(sim, runner),
            Stage::Finished => Ok(match &self.ctx.failure {
                Some(r) => Progress::Failed(r.clone()),
                None => Progress::Done,
            }),
        }
    }

    fn take_release_requests(&mut self) -> Vec<u32> {
        std::mem::take(&mut self.release)
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

fn current_line(sim: &Simulator, side: Side) -> Line {
    let st = sim.appendage(side);
    Line { theta2: st.theta2, along: st.l2 }
}

/// Inner line parallel to the axis whose tip passes `center` by `radius`
/// plus the clearance.
fn target_line(sim: &Simulator, axis: &GripAxis, side: Side, width: f64, center: Vec2<f64>, radius: f64) -> Line {
    let g = &sim.config().geometry;
    let exit = side.to_world(g, Vec2::new(g.a_for_width(width), -g.b));
    let along = (center - exit).dot(axis.direction) + radius + sim.config().auto_grip.clearance;
    Line { theta2: side.map_dir(axis.direction).angle(), along }
}

/// Tip centre (world) of an appendage whose inner section lies on `line` at
/// base width `a`.
fn line_tip(sim: &Simulator, side: Side, line: &Line, a: f64) -> Vec2<f64> {
    let g = &sim.config().geometry;
    let u = Vec2::from_angle(line.theta2);
    let local = Vec2::new(a, -g.b) + u * line.along + u.perp_ccw() * g.r0;
    side.to_world(g, local)
}

fn line_command(sim: &Simulator, lines: PerSide<Line>, width: f64) -> Result<StepCommand, ControlError> {
    let cfg = sim.config();
    let rate = (width - sim.state().width) / cfg.tick_dt;
    let a = next_base_width(sim, rate);
    let goal = |s: Side| Some(TipGoal { tip: line_tip(sim, s, lines.get(s), a), extra_inner_feed: 0.0 });
    Ok(tip_command(sim, PerSide { left: goal(Side::Left), right: goal(Side::Right) }, rate)?)
}
