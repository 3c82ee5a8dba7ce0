//! Deterministic quasi-static simulation of the two appendages and the rigid
//! objects they touch.
//!
//! There is no inertia and no gravity: free objects stay where they are, and
//! held objects move only through the no-slip kinematics of their two contact
//! points. Every update is first-order explicit in the tick.

pub mod contact;
pub mod object;
pub mod snapshot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::geometry::Vec2;
use crate::kinematics::{apply_command_at, forward_kinematics_with, ActuatorCommand, AppendageState, KinematicsError, Side};
use crate::mechanics::{estimate_contact_force, simulate_load_cell, MechanicsError, SpringBranch};

pub use contact::{contact_candidate, facing_candidate, Candidate, ContactReport, Segment};
pub use object::{Pose, Shape, SimObject};
pub use snapshot::{restore, snapshot, SnapshotError, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid initial pose: {0}")]
    Pose(String),
    #[error("no object with id {0}")]
    UnknownObject(u32),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("object {0} is not between both appendages")]
    NoContact(u32),
    #[error("gap interference {compression:.4} mm exceeds the spring range of {limit} mm")]
    OutOfRange { compression: f64, limit: f64 },
}

/// A value per appendage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerSide<T> {
    pub left: T,
    pub right: T,
}

impl<T> PerSide<T> {
    pub fn get(&self, side: Side) -> &T {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn get_mut(&mut self, side: Side) -> &mut T {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }
}

/// Actuator coordinates of one appendage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendagePose {
    pub length: f64,
    #[serde(deserialize_with = "crate::config::angle")]
    pub theta4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    /// Grip width at the base (mm).
    pub width: f64,
    pub left: AppendagePose,
    pub right: AppendagePose,
}

impl Default for InitialPose {
    fn default() -> Self {
        let pose = AppendagePose { length: 600.0, theta4: 45f64.to_radians() };
        Self { width: 100.0, left: pose, right: pose }
    }
}

/// Inputs for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepCommand {
    #[serde(default)]
    pub left: ActuatorCommand,
    #[serde(default)]
    pub right: ActuatorCommand,
    /// Grip-width rate (mm/s).
    #[serde(default, rename = "dWidth_rate")]
    pub width_rate: f64,
}

impl StepCommand {
    pub fn side(&self, side: Side) -> &ActuatorCommand {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut ActuatorCommand {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    ObjectGrasped { object: u32 },
    ObjectDropped { object: u32 },
    ObjectReleased { object: u32 },
    /// A contact force exceeded the buckling limit of the supporting section.
    Buckling { object: u32, side: Side, force: f64, limit: f64 },
    /// Spring compression beyond the fitted range; the force is clamped.
    SpringOverRange { object: u32, side: Side, compression: f64, limit: f64 },
}

impl WorldEvent {
    /// Events that make a scripted run fail.
    pub fn is_failure(&self) -> bool {
        matches!(self, WorldEvent::ObjectDropped { .. } | WorldEvent::Buckling { .. })
    }
}

/// What the base load cell of one appendage reports.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SideSensing {
    /// Sum of the load-cell readings of all contacts on this appendage.
    #[serde(rename = "F_read")]
    pub f_read: f64,
    /// Estimated contact force, using the lever of the strongest contact.
    #[serde(rename = "F2_prime")]
    pub f2_prime: f64,
    #[serde(rename = "L2_prime")]
    pub l2_prime: f64,
    pub object: Option<u32>,
}

/// Complete simulation truth at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub width: f64,
    pub left: AppendageState<f64>,
    pub right: AppendageState<f64>,
    pub objects: Vec<SimObject>,
    /// Sorted by object id, left before right.
    pub contacts: Vec<ContactReport>,
    pub sensing: PerSide<SideSensing>,
    /// Events raised by the tick that produced this state.
    pub events: Vec<WorldEvent>,
    /// Held objects whose loss of contact counts as a release.
    pub release_pending: Vec<u32>,
    pub next_object_id: u32,
}

impl WorldState {
    pub fn appendage(&self, side: Side) -> &AppendageState<f64> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn object(&self, id: u32) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn contact(&self, id: u32, side: Side) -> Option<&ContactReport> {
        self.contacts.iter().find(|c| c.object == id && c.side == side)
    }

    pub fn contacts_on(&self, side: Side) -> impl Iterator<Item = &ContactReport> + '_ {
        self.contacts.iter().filter(move |c| c.side == side)
    }
}

pub struct Simulator {
    config: SimConfig,
    state: WorldState,
}

impl Simulator {
    pub fn new(config: SimConfig, pose: &InitialPose) -> Result<Self, SimError> {
        config.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let g = &config.geometry;
        if !(pose.width >= g.width_min() && pose.width <= g.width_max()) {
            return Err(SimError::Pose(format!(
                "width {} outside [{}, {}]",
                pose.width,
                g.width_min(),
                g.width_max()
            )));
        }
        let a = g.a_for_width(pose.width);
        let solve = |side: Side, p: &AppendagePose| -> Result<AppendageState<f64>, SimError> {
            if !(p.length >= g.length_min && p.length <= g.length_max) {
                return Err(SimError::Pose(format!("{side:?} length {} outside limits", p.length)));
            }
            if !(p.theta4 >= g.theta4_min && p.theta4 <= g.theta4_max) {
                return Err(SimError::Pose(format!("{side:?} theta4 {} outside limits", p.theta4)));
            }
            Ok(forward_kinematics_with(g, &config.solver, side, p.length, p.theta4, a, None)?)
        };
        let left = solve(Side::Left, &pose.left)?;
        let right = solve(Side::Right, &pose.right)?;
        let state = WorldState {
            tick: 0,
            width: pose.width,
            left,
            right,
            objects: Vec::new(),
            contacts: Vec::new(),
            sensing: PerSide::default(),
            events: Vec::new(),
            release_pending: Vec::new(),
            next_object_id: 1,
        };
        Ok(Self { config, state })
    }

    /// Resumes from a recorded state.
    pub fn from_state(config: SimConfig, state: WorldState) -> Result<Self, SimError> {
        config.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn into_state(self) -> WorldState {
        self.state
    }

    pub fn appendage(&self, side: Side) -> &AppendageState<f64> {
        self.state.appendage(side)
    }

    pub fn world_tip(&self, side: Side) -> Vec2<f64> {
        self.appendage(side).world_tip(&self.config.geometry)
    }

    pub fn snapshot(&self) -> String {
        snapshot(&self.state)
    }

    /// Adds a free object and returns its id.
    pub fn spawn(&mut self, shape: Shape, pose: Pose) -> Result<u32, SimError> {
        shape.validate().map_err(SimError::InvalidObject)?;
        if !(pose.position.is_finite() && pose.orientation.is_finite()) {
            return Err(SimError::InvalidObject("non-finite pose".into()));
        }
        let id = self.state.next_object_id;
        let obj = SimObject { id, shape, pose, held: false };
        if let Some(other) = self.state.objects.iter().find(|o| o.overlaps(&obj)) {
            return Err(SimError::InvalidObject(format!("overlaps object {}", other.id)));
        }
        self.state.objects.push(obj);
        self.state.next_object_id += 1;
        let prev = self.state.contacts.clone();
        self.state.contacts = resolve_contacts(&self.config, &self.state, &prev, &mut Vec::new());
        self.state.sensing = summarise_sensing(&self.config, &self.state);
        Ok(id)
    }

    /// Marks a held object so that its coming loss of contact is a release.
    pub fn request_release(&mut self, id: u32) -> Result<(), SimError> {
        let obj = self.state.object(id).ok_or(SimError::UnknownObject(id))?;
        if obj.held && !self.state.release_pending.contains(&id) {
            self.state.release_pending.push(id);
        }
        Ok(())
    }

    /// Per-side force implied by the commanded gap around `id`: the spring
    /// evaluated at the gap interference, assuming the object is centred.
    pub fn grasp_gap_force(&self, id: u32) -> Result<PerSide<f64>, SimError> {
        let obj = self.state.object(id).ok_or(SimError::UnknownObject(id))?;
        let g = &self.config.geometry;
        let left = facing_candidate(g, &self.state.left, obj).ok_or(SimError::NoContact(id))?;
        let right = facing_candidate(g, &self.state.right, obj).ok_or(SimError::NoContact(id))?;
        let interference = left.penetration + right.penetration;
        let spring = &self.config.mechanics.spring;
        if interference > spring.max_displacement {
            return Err(SimError::OutOfRange { compression: interference, limit: spring.max_displacement });
        }
        let f = if interference > 0.0 { spring.loading_force(interference).unwrap_or(0.0) } else { 0.0 };
        Ok(PerSide { left: f, right: f })
    }

    /// Advances one tick. On error the world is left unchanged.
    pub fn step(&mut self, cmd: &StepCommand) -> Result<&[WorldEvent], SimError> {
        let cfg = &self.config;
        let geom = &cfg.geometry;
        let dt = cfg.tick_dt;
        let prev = &self.state;

        let rate = if cmd.width_rate.is_finite() {
            cmd.width_rate.clamp(-geom.max_width_rate, geom.max_width_rate)
        } else {
            0.0
        };
        let width = (prev.width + rate * dt).clamp(geom.width_min(), geom.width_max());
        let a = if width == prev.width { prev.left.a } else { geom.a_for_width(width) };
        let left = apply_command_at(geom, &cfg.solver, &prev.left, &cmd.left, dt, a)?;
        let right = apply_command_at(geom, &cfg.solver, &prev.right, &cmd.right, dt, a)?;

        let mut next = WorldState {
            tick: prev.tick + 1,
            width,
            left: left.state,
            right: right.state,
            objects: prev.objects.clone(),
            contacts: Vec::new(),
            sensing: PerSide::default(),
            events: Vec::new(),
            release_pending: prev.release_pending.clone(),
            next_object_id: prev.next_object_id,
        };
        let feeds = PerSide { left: left.inner_feed, right: right.inner_feed };

        let motions: Vec<(u32, Side, MaterialMotion)> = prev
            .contacts
            .iter()
            .map(|c| {
                let (p, n) = (prev.appendage(c.side), next.appendage(c.side));
                (c.object, c.side, material_motion(cfg, p, n, *feeds.get(c.side), c))
            })
            .collect();
        let motion = |id: u32, side: Side| {
            motions.iter().find(|(o, s, _)| *o == id && *s == side).map(|(_, _, m)| m)
        };
        for obj in next.objects.iter_mut().filter(|o| o.held) {
            let (Some(cl), Some(cr)) = (prev.contact(obj.id, Side::Left), prev.contact(obj.id, Side::Right)) else {
                continue;
            };
            let (Some(ml), Some(mr)) = (motion(obj.id, Side::Left), motion(obj.id, Side::Right)) else {
                continue;
            };
            let Some(n) = (cl.normal - cr.normal).normalized() else { continue };
            let t = n.perp_ccw();
            let (vl, vr) = (ml.displacement(), mr.displacement());
            let h = obj.support(n);
            obj.pose.position += (vl + vr) * 0.5;
            obj.pose.orientation += (vr - vl).dot(t) / (2.0 * h);
            recentre(cfg, &next.left, &next.right, obj, n);
        }

        let mut events = Vec::new();
        let mut contacts = resolve_contacts(cfg, &next, &prev.contacts, &mut events);
        for c in contacts.iter_mut() {
            if let Some(m) = motion(c.object, c.side) {
                c.surface_displacement = m.slide;
            }
        }
        next.contacts = contacts;
        update_holds(cfg, &mut next, &mut events);
        next.sensing = summarise_sensing(cfg, &next);
        next.events = events;
        self.state = next;
        Ok(&self.state.events)
    }
}

pub(crate) struct MaterialMotion {
    /// Motion of the contact location with the appendage shape (world).
    pub shape: Vec2<f64>,
    /// Tape slide through the contact location (mm) along `tangent`.
    pub slide: f64,
    pub tangent: Vec2<f64>,
}

impl MaterialMotion {
    pub fn displacement(&self) -> Vec2<f64> {
        self.shape + self.tangent * self.slide
    }
}

/// Motion of the tape material at a contact over one tick. The contact
/// location keeps its place on the surface (section distance or arc
/// direction) while material slides through it.
pub(crate) fn material_motion(
    cfg: &SimConfig,
    prev: &AppendageState<f64>,
    next: &AppendageState<f64>,
    inner_feed: f64,
    c: &ContactReport,
) -> MaterialMotion {
    let g = &cfg.geometry;
    let side = prev.side;
    let (shape, slide, tangent) = match c.segment {
        Segment::InnerSection => {
            let s = c.param;
            let old = prev.inner_exit(g) + prev.inner_dir() * s;
            let new = next.inner_exit(g) + next.inner_dir() * s;
            (new - old, inner_feed, next.inner_dir())
        }
        Segment::TipArc => {
            let dir = Vec2::from_angle(prev.theta2 - std::f64::consts::FRAC_PI_2 + c.param);
            (next.tip - prev.tip, inner_feed - (next.l2 - prev.l2), dir.perp_ccw())
        }
    };
    MaterialMotion { shape: side.map_dir(shape), slide, tangent: side.map_dir(tangent) }
}

/// Slides a held object along the grip axis until both penetrations agree,
/// which is the quasi-static balance of two equal springs.
fn recentre(cfg: &SimConfig, left: &AppendageState<f64>, right: &AppendageState<f64>, obj: &mut SimObject, n: Vec2<f64>) {
    let g = &cfg.geometry;
    for _ in 0..40 {
        let (Some(cl), Some(cr)) = (facing_candidate(g, left, obj), facing_candidate(g, right, obj)) else {
            return;
        };
        let gap = cl.penetration - cr.penetration;
        if gap.abs() < 1e-13 {
            return;
        }
        let slope = cr.normal.dot(n) - cl.normal.dot(n);
        if slope.abs() < 1e-6 {
            return;
        }
        obj.pose.position += n * (-gap / slope);
    }
}

fn resolve_contacts(
    cfg: &SimConfig,
    state: &WorldState,
    prev: &[ContactReport],
    events: &mut Vec<WorldEvent>,
) -> Vec<ContactReport> {
    let g = &cfg.geometry;
    let spring = &cfg.mechanics.spring;
    let mut out = Vec::new();
    let mut objects: Vec<&SimObject> = state.objects.iter().collect();
    objects.sort_by_key(|o| o.id);
    for obj in objects {
        for side in Side::BOTH {
            let app = state.appendage(side);
            let Some(cand) = contact_candidate(g, app, obj) else { continue };
            let mut c = ContactReport::from_candidate(side, obj.id, &cand, app);
            let before = prev.iter().find(|p| p.object == obj.id && p.side == side);
            let branch = match before {
                Some(p) if spring.unloading.is_some() && c.compression < p.compression => SpringBranch::Unloading,
                _ => SpringBranch::Loading,
            };
            let limit = spring.max_displacement;
            let x = if c.compression > limit {
                events.push(WorldEvent::SpringOverRange { object: obj.id, side, compression: c.compression, limit });
                limit
            } else {
                c.compression
            };
            c.force = spring.force(x, branch).unwrap_or(0.0).max(0.0);
            let cap = cfg.mechanics.buckling.force(app.l1).unwrap_or(0.0);
            if c.force > cap {
                events.push(WorldEvent::Buckling { object: obj.id, side, force: c.force, limit: cap });
            }
            c.estimate = sense(cfg, app, c.force, c.lever).ok();
            out.push(c);
        }
    }
    out
}

fn sense(
    cfg: &SimConfig,
    app: &AppendageState<f64>,
    force: f64,
    lever: f64,
) -> Result<crate::mechanics::ForceEstimate, MechanicsError> {
    let tau = &cfg.mechanics.torque;
    let f_read = simulate_load_cell(app, force, app.l1, lever, tau)?;
    estimate_contact_force(app, f_read, app.l1, lever, tau)
}

fn summarise_sensing(cfg: &SimConfig, state: &WorldState) -> PerSide<SideSensing> {
    let mut out = PerSide::<SideSensing>::default();
    for side in Side::BOTH {
        let mut strongest: Option<&ContactReport> = None;
        let mut f_read = 0.0;
        for c in state.contacts_on(side) {
            if let Some(e) = &c.estimate {
                f_read += e.f_read;
            }
            if strongest.is_none_or(|s| c.force > s.force) {
                strongest = Some(c);
            }
        }
        let Some(c) = strongest else { continue };
        let app = state.appendage(side);
        let est = estimate_contact_force(app, f_read, app.l1, c.lever, &cfg.mechanics.torque).ok();
        *out.get_mut(side) = SideSensing {
            f_read,
            f2_prime: est.map(|e| e.f2_prime).unwrap_or(0.0),
            l2_prime: c.lever,
            object: Some(c.object),
        };
    }
    out
}

fn update_holds(cfg: &SimConfig, state: &mut WorldState, events: &mut Vec<WorldEvent>) {
    let threshold = cfg.contact_threshold;
    let contacts = &state.contacts;
    let gripped = |id: u32| {
        Side::BOTH.iter().all(|&s| {
            contacts.iter().any(|c| c.object == id && c.side == s && c.force >= threshold)
        })
    };
    for obj in state.objects.iter_mut() {
        let releasing = state.release_pending.contains(&obj.id);
        let both = gripped(obj.id);
        match (obj.held, both) {
            (true, false) => {
                obj.held = false;
                events.push(if releasing {
                    WorldEvent::ObjectReleased { object: obj.id }
                } else {
                    WorldEvent::ObjectDropped { object: obj.id }
                });
            }
            (false, true) if !releasing => {
                obj.held = true;
                events.push(WorldEvent::ObjectGrasped { object: obj.id });
            }
            _ => {}
        }
    }
    let objects = &state.objects;
    state.release_pending.retain(|id| objects.iter().any(|o| o.id == *id && o.held));
}
