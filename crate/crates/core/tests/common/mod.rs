//! Independent oracles shared by the integration tests. Nothing here calls
//! the solver it is checking.
#![allow(dead_code)]

use std::f64::consts::PI;

use tapegrip_core::control::{apply_progress_command, run_controller, Controller, FailReason, Grasp, Progress, RunOutcome};
use tapegrip_core::sim::{InitialPose, Pose, Shape, Simulator, StepCommand, WorldEvent, WorldState};
use tapegrip_core::Side;
use tapegrip_core::{GripperGeometry, SimConfig, Vec2};

pub fn geom() -> GripperGeometry {
    GripperGeometry::default()
}

/// Outer-section angle from the control-beam angle, straight from the mount
/// drawing: the ring sits `l4` from the pivot at `(-d, c)`.
pub fn ring_angle(g: &GripperGeometry, theta4: f64) -> f64 {
    let x = -g.d + g.l4 * theta4.cos();
    let y = g.c + g.l4 * theta4.sin();
    y.atan2(x)
}

/// Closure by a dense sweep over the inner-section angle. For each `theta2`
/// the two tangent lines meet a circle of radius `r` at one `(l1, l2)`; the
/// total tape length is then bisected to `length`. Returns
/// `(l1, l2, theta2, tip)` for every root with both sections positive.
pub fn sweep_closure(g: &GripperGeometry, r: f64, length: f64, theta1: f64, a: f64) -> Vec<(f64, f64, f64, Vec2)> {
    let (u1x, u1y) = (theta1.cos(), theta1.sin());
    let eval = |t2: f64| -> Option<(f64, f64, f64)> {
        let (u2x, u2y) = (t2.cos(), t2.sin());
        // l1 u1 - l2 u2 = E + r (perp_ccw(u2) - perp_cw(u1))
        let rx = a + r * (-u2y - u1y);
        let ry = -g.b + r * (u2x + u1x);
        let det = u1x * (-u2y) - (-u2x) * u1y;
        if det.abs() < 1e-12 {
            return None;
        }
        let l1 = (rx * (-u2y) - (-u2x) * ry) / det;
        let l2 = (u1x * ry - u1y * rx) / det;
        let total = l1 + l2 + r * (theta1 - t2 + PI);
        Some((total - length, l1, l2))
    };
    let n = 40_000;
    let lo = theta1 - PI + 1e-9;
    let hi = theta1 + PI - 1e-9;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, (f64, f64, f64))> = None;
    for k in 0..=n {
        let t2 = lo + (hi - lo) * k as f64 / n as f64;
        let cur = eval(t2);
        if let (Some((tp, vp)), Some(vc)) = (prev, cur) {
            let ok = vp.1 > 0.0 && vp.2 > 0.0 && vc.1 > 0.0 && vc.2 > 0.0;
            if ok && (vp.0 < 0.0) != (vc.0 < 0.0) {
                let (mut a0, mut b0) = (tp, t2);
                let f0 = vp.0;
                for _ in 0..200 {
                    let m = 0.5 * (a0 + b0);
                    let fm = eval(m).map(|v| v.0).unwrap_or(f64::NAN);
                    if (fm < 0.0) == (f0 < 0.0) {
                        a0 = m;
                    } else {
                        b0 = m;
                    }
                }
                let t2 = 0.5 * (a0 + b0);
                if let Some((f, l1, l2)) = eval(t2) {
                    // Sign flips across the pole at parallel sections are not roots.
                    if f.abs() < 1e-6 {
                        let tip = Vec2::new(l1 * u1x + r * u1y, l1 * u1y - r * u1x);
                        roots.push((l1, l2, t2, tip));
                    }
                }
            }
        }
        prev = cur.map(|v| (t2, v));
    }
    roots
}

/// Tip position (local frame) of the closure checked by the sweep oracle.
pub fn oracle_tip(g: &GripperGeometry, length: f64, theta4: f64, a: f64) -> Option<Vec2> {
    let roots = sweep_closure(g, g.r0, length, ring_angle(g, theta4), a);
    (roots.len() == 1).then(|| roots[0].3)
}

/// Deterministic xorshift stream for grids that must not depend on a crate.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

pub fn sim() -> Simulator {
    Simulator::new(SimConfig::default(), &InitialPose::default()).unwrap()
}

pub fn sim_with(config: SimConfig) -> Simulator {
    Simulator::new(config, &InitialPose::default()).unwrap()
}

pub fn circle(radius: f64) -> Shape {
    Shape::Circle { radius }
}

pub fn at(x: f64, y: f64) -> Pose {
    Pose { position: Vec2::new(x, y), orientation: 0.0 }
}

pub fn run(sim: &mut Simulator, ctrl: &mut dyn Controller, max_ticks: u64) -> RunOutcome {
    run_controller(sim, ctrl, max_ticks).unwrap()
}

/// Steps `ctrl` to completion, checking every emitted command against the
/// rate limits and handing the world before and after each tick to `check`.
pub fn drive(
    sim: &mut Simulator,
    ctrl: &mut dyn Controller,
    max_ticks: u64,
    mut check: impl FnMut(&WorldState, &StepCommand, &WorldState),
) -> (u64, Result<(), FailReason>, Vec<WorldEvent>) {
    let mut events = Vec::new();
    for tick in 0..max_ticks {
        match ctrl.step(sim).unwrap() {
            Progress::Done => return (tick, Ok(()), events),
            Progress::Failed(r) => return (tick, Err(r), events),
            Progress::Running(cmd) => {
                let g = &sim.config().geometry;
                for side in Side::BOTH {
                    assert_eq!(*cmd.side(side), cmd.side(side).clamped(g), "rate limit exceeded");
                }
                assert!(cmd.width_rate.abs() <= g.max_width_rate);
                let before = sim.state().clone();
                events.extend(apply_progress_command(sim, ctrl, &cmd).unwrap());
                check(&before, &cmd, sim.state());
            }
        }
    }
    panic!("controller did not finish in {max_ticks} ticks");
}

pub fn grasped(sim: &mut Simulator, shape: Shape, x: f64, y: f64, force: f64) -> u32 {
    let id = sim.spawn(shape, at(x, y)).unwrap();
    let mut g = Grasp::new(sim, id, Some(force)).unwrap();
    assert_eq!(run(sim, &mut g, 10_000).result, Ok(()));
    assert!(sim.state().object(id).unwrap().held);
    id
}
