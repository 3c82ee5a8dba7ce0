use serde::{Deserialize, Serialize};

use super::{next_base_width, reachable, tip_command, ticks_for, ControlError, Controller, Progress, TipGoal};
use crate::geometry::Vec2;
use crate::kinematics::Side;
use crate::sim::{PerSide, Simulator};

/// A closed or open polyline for one tip, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub waypoints: Vec<Vec2<f64>>,
    /// Speed per segment (mm/s); a single entry applies to every segment.
    pub speeds: Vec<f64>,
    #[serde(default = "one")]
    pub loops: u32,
}

fn one() -> u32 {
    1
}

impl PathSpec {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidParams(m.into()));
        if self.waypoints.len() < 2 {
            return bad("a path needs at least 2 waypoints");
        }
        if !self.waypoints.iter().all(|p| p.is_finite()) {
            return bad("waypoints must be finite");
        }
        let segments = self.waypoints.len() - 1;
        if !(self.speeds.len() == 1 || self.speeds.len() == segments) {
            return bad("speeds must have one entry or one per segment");
        }
        if !self.speeds.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return bad("speeds must be > 0");
        }
        if self.loops == 0 {
            return bad("loops must be >= 1");
        }
        Ok(())
    }

    fn speed(&self, segment: usize) -> f64 {
        if self.speeds.len() == 1 {
            self.speeds[0]
        } else {
            self.speeds[segment]
        }
    }

    /// Per-tick tip targets of one loop, ending on the last waypoint.
    fn loop_targets(&self, dt: f64) -> Vec<Vec2<f64>> {
        let mut out = Vec::new();
        for (k, pair) in self.waypoints.windows(2).enumerate() {
            let n = ticks_for(pair[0].distance(pair[1]), self.speed(k), dt);
            out.extend((1..=n).map(|i| pair[0].lerp(pair[1], i as f64 / n as f64)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathShape {
    Square,
    Triangle,
    Circle,
    Star,
}

impl PathShape {
    /// Closed waypoint loop of the given size around `center`: edge length for
    /// the square and triangle, diameter for the circle and the star's outer
    /// points. The loop starts and ends on the same point.
    pub fn waypoints(self, center: Vec2<f64>, size: f64) -> Vec<Vec2<f64>> {
        let ring = |n: usize, radius: &dyn Fn(usize) -> f64, phase: f64| -> Vec<Vec2<f64>> {
            let mut pts: Vec<Vec2<f64>> = (0..n)
                .map(|i| {
                    let ang = phase + std::f64::consts::TAU * i as f64 / n as f64;
                    center + Vec2::from_angle(ang) * radius(i)
                })
                .collect();
            pts.push(pts[0]);
            pts
        };
        let half_pi = std::f64::consts::FRAC_PI_2;
        match self {
            PathShape::Square => {
                let h = size * 0.5;
                let mut pts: Vec<Vec2<f64>> = [(-h, -h), (h, -h), (h, h), (-h, h)]
                    .iter()
                    .map(|&(x, y)| center + Vec2::new(x, y))
                    .collect();
                pts.push(pts[0]);
                pts
            }
            PathShape::Triangle => ring(3, &|_| size / 3f64.sqrt(), half_pi),
            PathShape::Circle => ring(120, &|_| size * 0.5, 0.0),
            PathShape::Star => {
                let outer = size * 0.5;
                let inner = outer * 0.381_966_011_250_105_1;
                ring(10, &|i| if i % 2 == 0 { outer } else { inner }, half_pi)
            }
        }
    }
}

/// Drives one tip along a path; the other appendage holds still.
pub struct FollowPath {
    side: Side,
    targets: Vec<(u32, Vec2<f64>)>,
    next: usize,
}

impl FollowPath {
    /// Targets start with an approach leg from the current tip to the first
    /// waypoint (loop 0), followed by `path.loops` loops numbered from 1.
    pub fn new(sim: &Simulator, side: Side, path: &PathSpec) -> Result<Self, ControlError> {
        path.validate()?;
        // The base width is held, so every waypoint must be reachable at it.
        let a = next_base_width(sim, 0.0);
        for &p in &path.waypoints {
            reachable(sim, side, p, a)?;
        }
        let dt = sim.config().tick_dt;
        let start = sim.world_tip(side);
        let first = path.waypoints[0];
        let mut targets = Vec::new();
        let n = ticks_for(start.distance(first), path.speed(0), dt);
        if start.distance(first) > 1e-9 {
            targets.extend((1..=n).map(|i| (0, start.lerp(first, i as f64 / n as f64))));
        }
        let one_loop = path.loop_targets(dt);
        for k in 1..=path.loops {
            targets.extend(one_loop.iter().map(|&p| (k, p)));
        }
        Ok(Self { side, targets, next: 0 })
    }

    /// Target and loop index that the next step will command.
    pub fn upcoming(&self) -> Option<(u32, Vec2<f64>)> {
        self.targets.get(self.next).copied()
    }
}

impl Controller for FollowPath {
    fn name(&self) -> &'static str {
        "follow_path"
    }

    fn step(&mut self, sim: &Simulator) -> Result<Progress, ControlError> {
        let Some(&(_, target)) = self.targets.get(self.next) else {
            return Ok(Progress::Done);
        };
        let mut goals = PerSide::default();
        *goals.get_mut(self.side) = Some(TipGoal { tip: target, extra_inner_feed: 0.0 });
        let cmd = tip_command(sim, goals, 0.0)?;
        self.next += 1;
        Ok(Progress::Running(cmd))
    }
}

/// Commanded versus achieved tip position after one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub tick: u64,
    /// 0 for the approach leg.
    #[serde(rename = "loop")]
    pub loop_index: u32,
    pub commanded: Vec2<f64>,
    pub achieved: Vec2<f64>,
}

impl TraceSample {
    pub fn error(&self) -> f64 {
        self.commanded.distance(self.achieved)
    }
}

/// Error of a path run, carrying the trace recorded up to the failure.
#[derive(Debug)]
pub struct PathAbort {
    pub error: ControlError,
    pub trace: Vec<TraceSample>,
}

/// Runs a path to completion, logging every tick.
pub fn follow_path(sim: &mut Simulator, side: Side, path: &PathSpec) -> Result<Vec<TraceSample>, PathAbort> {
    let mut ctrl = FollowPath::new(sim, side, path).map_err(|error| PathAbort { error, trace: Vec::new() })?;
    let mut trace = Vec::with_capacity(ctrl.targets.len());
    loop {
        let Some((loop_index, commanded)) = ctrl.upcoming() else {
            return Ok(trace);
        };
        let abort = |error: ControlError, trace: Vec<TraceSample>| PathAbort { error, trace };
        let cmd = match ctrl.step(sim) {
            Ok(Progress::Running(cmd)) => cmd,
            Ok(_) => return Ok(trace),
            Err(e) => return Err(abort(e, trace)),
        };
        if let Err(e) = sim.step(&cmd) {
            return Err(abort(e.into(), trace));
        }
        let achieved = sim.world_tip(side);
        trace.push(TraceSample { tick: sim.state().tick, loop_index, commanded, achieved });
    }
}

pub const TRACE_HEADER: [&str; 7] =
    ["tick", "loop", "commanded_x_mm", "commanded_y_mm", "achieved_x_mm", "achieved_y_mm", "error_mm"];

/// Writes a trace as CSV. Numbers use the shortest exact representation, so
/// reading the file back reproduces the samples bit for bit.
pub fn write_trace<W: std::io::Write>(trace: &[TraceSample], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for s in trace {
        w.write_record([
            s.tick.to_string(),
            s.loop_index.to_string(),
            s.commanded.x.to_string(),
            s.commanded.y.to_string(),
            s.achieved.x.to_string(),
            s.achieved.y.to_string(),
            s.error().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: std::io::Read>(input: R) -> Result<Vec<TraceSample>, ControlError> {
    let bad = |m: String| ControlError::InvalidParams(m);
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected trace header {header:?}")));
    }
    let mut out = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| -> Result<&str, ControlError> {
            rec.get(i).ok_or_else(|| bad(format!("line {}: missing field {}", k + 2, TRACE_HEADER[i])))
        };
        let num = |i: usize| -> Result<f64, ControlError> {
            field(i)?.parse().map_err(|_| bad(format!("line {}: bad {}", k + 2, TRACE_HEADER[i])))
        };
        out.push(TraceSample {
            tick: field(0)?.parse().map_err(|_| bad(format!("line {}: bad tick", k + 2)))?,
            loop_index: field(1)?.parse().map_err(|_| bad(format!("line {}: bad loop", k + 2)))?,
            commanded: Vec2::new(num(2)?, num(3)?),
            achieved: Vec2::new(num(4)?, num(5)?),
        });
    }
    Ok(out)
}
