//! Appendage triangle kinematics.
//!
//! Each appendage is modelled in a local frame whose origin is the outer
//! extruder exit. The outer straight section leaves the origin along the
//! guiding-ring direction `theta1`, wraps clockwise around a rolling joint of
//! radius `r` centred at the tip, and returns along the inner straight section
//! to the inner extruder exit at `(a, -b)`. The local frame is the left
//! appendage's world orientation; the right appendage is its mirror image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GripperGeometry, SolverSettings};
use crate::geometry::Vec2;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Maps a local-frame point into the world frame (base centre at the origin).
    pub fn to_world<T: Real>(self, geom: &GripperGeometry<T>, p: Vec2<T>) -> Vec2<T> {
        let half = geom.outer_extruder_spacing * T::lit(0.5);
        match self {
            Side::Left => Vec2::new(p.x - half, p.y),
            Side::Right => Vec2::new(half - p.x, p.y),
        }
    }

    pub fn to_local<T: Real>(self, geom: &GripperGeometry<T>, p: Vec2<T>) -> Vec2<T> {
        let half = geom.outer_extruder_spacing * T::lit(0.5);
        match self {
            Side::Left => Vec2::new(p.x + half, p.y),
            Side::Right => Vec2::new(half - p.x, p.y),
        }
    }

    /// Maps a direction (free vector) between the local and world frames.
    /// The mapping is an involution.
    pub fn map_dir<T: Real>(self, v: Vec2<T>) -> Vec2<T> {
        match self {
            Side::Left => v,
            Side::Right => v.mirror_x(),
        }
    }
}

/// Which workspace boundary an unreachable target violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    AngularLeft,
    AngularRight,
    RadialInner,
    RadialOuter,
}

impl Boundary {
    /// Boundary as seen by `side`, given the violation in the native (left) frame.
    fn for_side(self, side: Side) -> Boundary {
        match (side, self) {
            (Side::Right, Boundary::AngularLeft) => Boundary::AngularRight,
            (Side::Right, Boundary::AngularRight) => Boundary::AngularLeft,
            (_, b) => b,
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Boundary::AngularLeft => "angular-left",
            Boundary::AngularRight => "angular-right",
            Boundary::RadialInner => "radial-inner",
            Boundary::RadialOuter => "radial-outer",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("appendage triangle cannot close: length {length:.3} mm, closure minimum {closure_min:.3} mm")]
    NoSolution { length: f64, closure_min: f64 },
    #[error("forward kinematics did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("target outside workspace ({0})")]
    OutOfWorkspace(Boundary),
    #[error("angle {angle:.6} rad outside control-beam range")]
    OutOfRange { angle: f64 },
}

/// Solved configuration of one appendage. Points are in the appendage's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendageState<T> {
    pub side: Side,
    /// Total deployed tape length.
    pub length: T,
    /// Base width between outer and inner extruder exits.
    pub a: T,
    pub theta4: T,
    pub l1: T,
    pub l2: T,
    pub l3: T,
    pub theta1: T,
    pub theta2: T,
    pub theta3: T,
    pub r: T,
    /// Centre of the rolling joint.
    pub tip: Vec2<T>,
}

impl<T: Real> AppendageState<T> {
    pub fn outer_dir(&self) -> Vec2<T> {
        Vec2::from_angle(self.theta1)
    }

    pub fn inner_dir(&self) -> Vec2<T> {
        Vec2::from_angle(self.theta2)
    }

    pub fn inner_exit(&self, geom: &GripperGeometry<T>) -> Vec2<T> {
        Vec2::new(self.a, -geom.b)
    }

    /// Tangent point between the outer section and the rolling arc.
    pub fn outer_tangent(&self) -> Vec2<T> {
        self.outer_dir() * self.l1
    }

    /// Tangent point between the inner section and the rolling arc.
    pub fn inner_tangent(&self, geom: &GripperGeometry<T>) -> Vec2<T> {
        self.inner_exit(geom) + self.inner_dir() * self.l2
    }

    /// Rolling-arc turning angle `theta1 - theta2 + pi`.
    pub fn arc_angle(&self) -> T {
        self.theta1 - self.theta2 + T::PI()
    }

    pub fn world_tip(&self, geom: &GripperGeometry<T>) -> Vec2<T> {
        self.side.to_world(geom, self.tip)
    }

    /// The three closure residuals: total length, y and x closure (mm).
    pub fn residuals(&self, geom: &GripperGeometry<T>) -> [T; 3] {
        closure_residuals(
            self.length, self.a, geom.b, self.r, self.theta1, self.l1, self.l2, self.theta2,
        )
    }

    pub fn max_residual(&self, geom: &GripperGeometry<T>) -> T {
        self.residuals(geom)
            .iter()
            .fold(T::zero(), |m, r| m.max(r.abs()))
    }
}

#[allow(clippy::too_many_arguments)]
fn closure_residuals<T: Real>(
    length: T,
    a: T,
    b: T,
    r: T,
    theta1: T,
    l1: T,
    l2: T,
    theta2: T,
) -> [T; 3] {
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    let half_pi = T::FRAC_PI_2();
    [
        l1 + l2 + r * (theta1 - theta2 + T::PI()) - length,
        l1 * s1 + r * (theta1 - half_pi).sin() - (l2 * s2 + r * (theta2 + half_pi).sin() - b),
        l1 * c1 + r * (theta1 - half_pi).cos() - (l2 * c2 + r * (theta2 + half_pi).cos() + a),
    ]
}

/// Guiding-ring position relative to the outer extruder exit.
pub fn guide_ring<T: Real>(geom: &GripperGeometry<T>, theta4: T) -> Vec2<T> {
    Vec2::new(-geom.d, geom.c) + Vec2::from_angle(theta4) * geom.l4
}

fn theta4_in_limits<T: Real>(geom: &GripperGeometry<T>, theta4: T) -> bool {
    let slack = T::lit(1e-12);
    theta4 >= geom.theta4_min - slack && theta4 <= geom.theta4_max + slack
}

/// Outer-section angle set by the control beam, without range checks.
pub fn guide_angle<T: Real>(geom: &GripperGeometry<T>, theta4: T) -> T {
    guide_ring(geom, theta4).angle()
}

/// Control-beam angle that puts the guiding ring on the ray at `theta1`,
/// without range checks. The result lies in `(-pi, pi]`.
pub fn beam_angle_for<T: Real>(geom: &GripperGeometry<T>, theta1: T) -> T {
    // Ring position t * u with |t u - P| = L4, P the pivot; take the positive root.
    let u = Vec2::from_angle(theta1);
    let pivot = Vec2::new(-geom.d, geom.c);
    let proj = u.dot(pivot);
    let disc = proj * proj - pivot.norm_squared() + geom.l4 * geom.l4;
    let t = proj + disc.max(T::zero()).sqrt();
    (u * t - pivot).angle()
}

/// Nearest representative of `theta4` (mod 2 pi) to the middle of the beam range.
fn unwrap_beam<T: Real>(geom: &GripperGeometry<T>, theta4: T) -> T {
    let mid = (geom.theta4_min + geom.theta4_max) * T::lit(0.5);
    mid + (theta4 - mid).wrap_angle()
}

pub fn theta4_to_theta1<T: Real>(geom: &GripperGeometry<T>, theta4: T) -> Result<T, KinematicsError> {
    if !theta4_in_limits(geom, theta4) {
        return Err(KinematicsError::OutOfRange { angle: theta4.to_f64_lossy() });
    }
    Ok(guide_angle(geom, theta4))
}

pub fn theta1_to_theta4<T: Real>(geom: &GripperGeometry<T>, theta1: T) -> Result<T, KinematicsError> {
    let theta4 = unwrap_beam(geom, beam_angle_for(geom, theta1));
    if !theta4_in_limits(geom, theta4) {
        return Err(KinematicsError::OutOfRange { angle: theta4.to_f64_lossy() });
    }
    Ok(theta4)
}

/// Shifts `theta2` by whole turns so that the arc angle lies in `(0, 2 pi]`.
fn canonical_theta2<T: Real>(theta1: T, theta2: T) -> T {
    let tau = T::TAU();
    let arc = theta1 - theta2 + T::PI();
    let turns = ((arc - T::lit(1e-15)) / tau).floor();
    theta2 + turns * tau
}

/// Inner-section length and angle for a given tip, by the tangent construction.
/// Returns `None` when the inner exit lies inside the rolling circle.
fn inner_tangent_line<T: Real>(tip: Vec2<T>, exit: Vec2<T>, r: T) -> Option<(T, T)> {
    let d = tip - exit;
    let rho = d.norm();
    if rho <= r || rho == T::zero() {
        return None;
    }
    let l2 = (rho * rho - r * r).sqrt();
    let theta2 = d.angle() - (r / rho).asin();
    Some((l2, theta2))
}

/// One-dimensional reduction of the closure: for an outer length `l1` along
/// `theta1`, the total-length mismatch and the matching (l2, theta2).
fn length_mismatch<T: Real>(
    geom: &GripperGeometry<T>,
    theta1: T,
    a: T,
    length: T,
    l1: T,
) -> Option<(T, T, T)> {
    let u1 = Vec2::from_angle(theta1);
    let tip = u1 * l1 + u1.perp_cw() * geom.r0;
    let (l2, theta2) = inner_tangent_line(tip, Vec2::new(a, -geom.b), geom.r0)?;
    let theta2 = canonical_theta2(theta1, theta2);
    let g = l1 + l2 + geom.r0 * (theta1 - theta2 + T::PI()) - length;
    Some((g, l2, theta2))
}

/// Shortest total length for which the triangle closes with `l1 -> 0`.
pub fn closure_min_length<T: Real>(geom: &GripperGeometry<T>, theta4: T, a: T) -> Option<T> {
    let theta1 = guide_angle(geom, theta4);
    length_mismatch(geom, theta1, a, T::zero(), T::zero()).map(|(g, _, _)| g)
}

#[allow(clippy::too_many_arguments)]
fn build_state<T: Real>(
    geom: &GripperGeometry<T>,
    side: Side,
    length: T,
    theta4: T,
    a: T,
    theta1: T,
    l1: T,
    l2: T,
    theta2: T,
) -> AppendageState<T> {
    let u1 = Vec2::from_angle(theta1);
    let r = geom.r0;
    AppendageState {
        side,
        length,
        a,
        theta4,
        l1,
        l2,
        l3: r * (theta1 - theta2 + T::PI()),
        theta1,
        theta2,
        theta3: theta1 + theta2,
        r,
        tip: u1 * l1 + u1.perp_cw() * r,
    }
}

/// Forward kinematics with default solver settings and a cold start.
pub fn forward_kinematics<T: Real>(
    geom: &GripperGeometry<T>,
    side: Side,
    length: T,
    theta4: T,
    a: T,
) -> Result<AppendageState<T>, KinematicsError> {
    forward_kinematics_with(geom, &SolverSettings::default(), side, length, theta4, a, None)
}

/// Solves the three closure equations for `(l1, l2, theta2)` by damped Newton
/// iteration. `warm` seeds the iteration; without it a bracketing scan over
/// `l1` provides the initial guess.
pub fn forward_kinematics_with<T: Real>(
    geom: &GripperGeometry<T>,
    solver: &SolverSettings<T>,
    side: Side,
    length: T,
    theta4: T,
    a: T,
    warm: Option<&AppendageState<T>>,
) -> Result<AppendageState<T>, KinematicsError> {
    let theta1 = guide_angle(geom, theta4);
    let closure_min = length_mismatch(geom, theta1, a, T::zero(), T::zero()).map(|(g, _, _)| g);
    let no_solution = |cm: Option<T>| KinematicsError::NoSolution {
        length: length.to_f64_lossy(),
        closure_min: cm.map(|c| c.to_f64_lossy()).unwrap_or(f64::NAN),
    };
    match closure_min {
        Some(cm) if length > cm + T::one() => {}
        cm => return Err(no_solution(cm)),
    }

    let guess = match warm {
        Some(w) if w.l1 > T::zero() && w.l2 > T::zero() => {
            // Warm starts carry the previous theta2 branch; re-anchor it to this theta1.
            (w.l1, w.l2, canonical_theta2(theta1, w.theta2))
        }
        _ => cold_start(geom, theta1, a, length).ok_or_else(|| no_solution(closure_min))?,
    };

    let (l1, l2, theta2) = newton_closure(geom, solver, theta1, a, length, guess)?;
    if !(l1 > T::zero() && l2 > T::zero()) {
        return Err(no_solution(closure_min));
    }
    let theta2c = canonical_theta2(theta1, theta2);
    if theta2c != theta2 {
        // Converged onto a neighbouring winding; the length equation rules it out.
        return Err(no_solution(closure_min));
    }
    Ok(build_state(geom, side, length, theta4, a, theta1, l1, l2, theta2))
}

fn cold_start<T: Real>(geom: &GripperGeometry<T>, theta1: T, a: T, length: T) -> Option<(T, T, T)> {
    const SCAN: usize = 32;
    let mut lo = T::zero();
    let (g0, _, _) = length_mismatch(geom, theta1, a, length, lo)?;
    if g0 >= T::zero() {
        return None;
    }
    let mut hi = None;
    for k in 1..=SCAN {
        let l1 = length * T::lit(k as f64 / SCAN as f64);
        match length_mismatch(geom, theta1, a, length, l1) {
            Some((g, _, _)) if g >= T::zero() => {
                hi = Some(l1);
                break;
            }
            Some(_) => lo = l1,
            None => break,
        }
    }
    let mut hi = hi?;
    for _ in 0..24 {
        let mid = (lo + hi) * T::lit(0.5);
        match length_mismatch(geom, theta1, a, length, mid) {
            Some((g, _, _)) if g < T::zero() => lo = mid,
            _ => hi = mid,
        }
    }
    let l1 = (lo + hi) * T::lit(0.5);
    let (_, l2, theta2) = length_mismatch(geom, theta1, a, length, l1)?;
    Some((l1, l2, theta2))
}

fn solve3<T: Real>(m: [[T; 3]; 3], rhs: [T; 3]) -> Option<[T; 3]> {
    let det3 = |m: &[[T; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(&m);
    if det == T::zero() || !det.is_finite() {
        return None;
    }
    let mut out = [T::zero(); 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = rhs[row];
        }
        *slot = det3(&mc) / det;
    }
    Some(out)
}

fn residual_norm<T: Real>(f: &[T; 3]) -> T {
    f.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

fn newton_closure<T: Real>(
    geom: &GripperGeometry<T>,
    solver: &SolverSettings<T>,
    theta1: T,
    a: T,
    length: T,
    guess: (T, T, T),
) -> Result<(T, T, T), KinematicsError> {
    let r = geom.r0;
    let (s1, c1) = theta1.sin_cos();
    let (mut l1, mut l2, mut theta2) = guess;
    let eval = |l1: T, l2: T, t2: T| closure_residuals(length, a, geom.b, r, theta1, l1, l2, t2);
    let mut f = eval(l1, l2, theta2);
    let mut res = residual_norm(&f);
    let mut polish = 0;
    for _ in 0..solver.max_iter {
        if res <= solver.residual_tol {
            // A couple of extra steps drive the residual to round-off.
            polish += 1;
            if polish > 2 || res == T::zero() {
                break;
            }
        }
        let (s2, c2) = theta2.sin_cos();
        let jac = [
            [T::one(), T::one(), -r],
            [s1, -s2, -l2 * c2 + r * s2],
            [c1, -c2, l2 * s2 + r * c2],
        ];
        let step = match solve3(jac, f) {
            Some(s) => s,
            None => break,
        };
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let (n1, n2, nt) = (l1 - step[0] * lambda, l2 - step[1] * lambda, theta2 - step[2] * lambda);
            let nf = eval(n1, n2, nt);
            let nres = residual_norm(&nf);
            if nres < res || (res <= solver.residual_tol && nres <= res) {
                l1 = n1;
                l2 = n2;
                theta2 = nt;
                f = nf;
                res = nres;
                accepted = true;
                break;
            }
            lambda = lambda * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    if res <= solver.residual_tol {
        Ok((l1, l2, theta2))
    } else {
        Err(KinematicsError::NotConverged {
            iterations: solver.max_iter,
            residual: res.to_f64_lossy(),
        })
    }
}

/// Closed-form inverse kinematics for a tip target given in the world frame.
pub fn inverse_kinematics<T: Real>(
    geom: &GripperGeometry<T>,
    side: Side,
    target: Vec2<T>,
    a: T,
) -> Result<AppendageState<T>, KinematicsError> {
    inverse_kinematics_local(geom, side, side.to_local(geom, target), a)
}

/// Inverse kinematics for a tip target in the appendage's local frame.
pub fn inverse_kinematics_local<T: Real>(
    geom: &GripperGeometry<T>,
    side: Side,
    tip: Vec2<T>,
    a: T,
) -> Result<AppendageState<T>, KinematicsError> {
    let out = |b: Boundary| KinematicsError::OutOfWorkspace(b.for_side(side));
    let r = geom.r0;
    let rho1 = tip.norm();
    if rho1 <= r {
        return Err(out(Boundary::RadialInner));
    }
    let l1 = (rho1 * rho1 - r * r).sqrt();
    let theta1 = tip.angle() + (r / rho1).asin();
    let (l2, theta2) =
        inner_tangent_line(tip, Vec2::new(a, -geom.b), r).ok_or_else(|| out(Boundary::RadialInner))?;
    let theta2 = canonical_theta2(theta1, theta2);
    let theta4 = unwrap_beam(geom, beam_angle_for(geom, theta1));
    if theta4 > geom.theta4_max + T::lit(1e-12) {
        return Err(out(Boundary::AngularLeft));
    }
    if theta4 < geom.theta4_min - T::lit(1e-12) {
        return Err(out(Boundary::AngularRight));
    }
    let length = l1 + l2 + r * (theta1 - theta2 + T::PI());
    let slack = T::lit(1e-9) * geom.length_max;
    if length < geom.length_min - slack {
        return Err(out(Boundary::RadialInner));
    }
    if length > geom.length_max + slack {
        return Err(out(Boundary::RadialOuter));
    }
    let mut state = build_state(geom, side, length, theta4, a, theta1, l1, l2, theta2);
    state.tip = tip;
    Ok(state)
}

/// Per-appendage actuator rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorCommand {
    /// Outer extruder feed rate (mm/s); positive deploys tape.
    #[serde(rename = "dL1_rate")]
    pub outer_rate: f64,
    /// Inner extruder feed rate (mm/s); positive deploys tape.
    #[serde(rename = "dL2_rate")]
    pub inner_rate: f64,
    #[serde(rename = "dTheta4_rate")]
    pub theta4_rate: f64,
}

impl ActuatorCommand {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Equal and opposite feeds: moves the inner surface by `inner_feed` per
    /// tick without changing the appendage shape.
    pub fn conveyance(inner_feed: f64, dt: f64) -> Self {
        Self { outer_rate: -inner_feed / dt, inner_rate: inner_feed / dt, theta4_rate: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.outer_rate == 0.0 && self.inner_rate == 0.0 && self.theta4_rate == 0.0
    }

    pub fn clamped(&self, geom: &GripperGeometry<f64>) -> Self {
        let lim = |v: f64, m: f64| if v.is_finite() { v.clamp(-m, m) } else { 0.0 };
        Self {
            outer_rate: lim(self.outer_rate, geom.max_length_rate),
            inner_rate: lim(self.inner_rate, geom.max_length_rate),
            theta4_rate: lim(self.theta4_rate, geom.max_theta4_rate),
        }
    }
}

/// Result of advancing one appendage by one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandOutcome {
    pub state: AppendageState<f64>,
    /// Tape deployed through the outer extruder this tick (mm).
    pub outer_feed: f64,
    /// Tape deployed through the inner extruder this tick (mm); the signed
    /// conveyance displacement of the inner surface.
    pub inner_feed: f64,
}

/// Applies one tick of actuator rates at the current base width.
pub fn apply_command(
    geom: &GripperGeometry<f64>,
    solver: &SolverSettings<f64>,
    state: &AppendageState<f64>,
    cmd: &ActuatorCommand,
    dt: f64,
) -> Result<CommandOutcome, KinematicsError> {
    apply_command_at(geom, solver, state, cmd, dt, state.a)
}

/// Applies one tick of actuator rates with the base width moved to `a`.
/// Rates are clamped to the geometry limits, and the resulting length and beam
/// angle to their ranges; feeds are scaled together when the length saturates.
pub fn apply_command_at(
    geom: &GripperGeometry<f64>,
    solver: &SolverSettings<f64>,
    state: &AppendageState<f64>,
    cmd: &ActuatorCommand,
    dt: f64,
    a: f64,
) -> Result<CommandOutcome, KinematicsError> {
    let cmd = cmd.clamped(geom);
    let mut outer = cmd.outer_rate * dt;
    let mut inner = cmd.inner_rate * dt;
    let wanted = outer + inner;
    let length = (state.length + wanted).clamp(geom.length_min, geom.length_max);
    let got = length - state.length;
    if wanted != 0.0 && got != wanted {
        let k = got / wanted;
        outer *= k;
        inner *= k;
    }
    let theta4 = (state.theta4 + cmd.theta4_rate * dt).clamp(geom.theta4_min, geom.theta4_max);
    let length = state.length + (outer + inner);
    if length == state.length && theta4 == state.theta4 && a == state.a {
        return Ok(CommandOutcome { state: *state, outer_feed: outer, inner_feed: inner });
    }
    let next = forward_kinematics_with(geom, solver, state.side, length, theta4, a, Some(state))?;
    Ok(CommandOutcome { state: next, outer_feed: outer, inner_feed: inner })
}

/// Rates that drive `state` to `target` in one tick, with the inner extruder
/// feeding exactly the change in inner-section length plus `extra_inner_feed`.
/// Callers clamp.
pub fn command_toward(
    state: &AppendageState<f64>,
    target: &AppendageState<f64>,
    extra_inner_feed: f64,
    dt: f64,
) -> ActuatorCommand {
    let inner = (target.l2 - state.l2) + extra_inner_feed;
    let outer = (target.length - state.length) - inner;
    ActuatorCommand {
        outer_rate: outer / dt,
        inner_rate: inner / dt,
        theta4_rate: (target.theta4 - state.theta4) / dt,
    }
}
