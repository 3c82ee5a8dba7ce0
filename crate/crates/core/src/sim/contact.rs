//! Contact geometry between an object and one appendage.
//!
//! Only the inner straight section and the rolling-joint arc present a
//! gripping surface; the outer section faces away from the grip region.

use serde::{Deserialize, Serialize};

use super::object::SimObject;
use crate::config::GripperGeometry;
use crate::geometry::Vec2;
use crate::kinematics::{AppendageState, Side};
use crate::mechanics::ForceEstimate;

use std::f64::consts::{FRAC_PI_2, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segment {
    InnerSection,
    TipArc,
}

/// Candidate contact of one object against one appendage surface. Whether the
/// object actually touches is decided by the sign of `penetration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub segment: Segment,
    /// Object extent minus the centre's distance to the surface (mm).
    pub penetration: f64,
    /// Unit surface normal pointing at the object, world frame.
    pub normal: Vec2<f64>,
    /// Object support half-width along the normal.
    pub half_width: f64,
    /// Inner section: distance from the inner extruder exit. Tip arc: angle
    /// of the contact direction measured from the inner tangent point.
    pub param: f64,
    /// Object boundary point facing the surface, world frame.
    pub point: Vec2<f64>,
}

fn arc_offset(state: &AppendageState<f64>, dir: Vec2<f64>) -> f64 {
    let start = state.theta2 - FRAC_PI_2;
    (dir.angle() - start).rem_euclid(TAU)
}

/// The inner-section candidate, when the object centre projects onto it from
/// the gripping side.
pub fn inner_candidate(
    geom: &GripperGeometry<f64>,
    state: &AppendageState<f64>,
    object: &SimObject,
) -> Option<Candidate> {
    let side = state.side;
    let c = side.to_local(geom, object.pose.position);
    let e = c - state.inner_exit(geom);
    let u = state.inner_dir();
    let m = u.perp_cw();
    let s = e.dot(u);
    let d = e.dot(m);
    if !(s >= 0.0 && s <= state.l2 && d > 0.0) {
        return None;
    }
    let normal = side.map_dir(m);
    let h = object.support(normal);
    Some(Candidate {
        segment: Segment::InnerSection,
        penetration: h - d,
        normal,
        half_width: h,
        param: s,
        point: object.support_point(-normal),
    })
}

/// The tip-arc candidate, when the direction from the joint centre to the
/// object falls on the tape-covered part of the arc.
pub fn tip_candidate(
    geom: &GripperGeometry<f64>,
    state: &AppendageState<f64>,
    object: &SimObject,
) -> Option<Candidate> {
    let side = state.side;
    let v = side.to_local(geom, object.pose.position) - state.tip;
    let dist = v.norm();
    let dir = v.normalized()?;
    let offset = arc_offset(state, dir);
    if offset > state.arc_angle() {
        return None;
    }
    let normal = side.map_dir(dir);
    let h = object.support(normal);
    Some(Candidate {
        segment: Segment::TipArc,
        penetration: h - (dist - state.r),
        normal,
        half_width: h,
        param: offset,
        point: object.support_point(-normal),
    })
}

/// The surface facing the object, touching or not. The inner section governs
/// whenever it is in contact.
pub fn facing_candidate(
    geom: &GripperGeometry<f64>,
    state: &AppendageState<f64>,
    object: &SimObject,
) -> Option<Candidate> {
    let inner = inner_candidate(geom, state, object);
    let tip = tip_candidate(geom, state, object);
    match (inner, tip) {
        (Some(i), _) if i.penetration > 0.0 => Some(i),
        (_, Some(t)) if t.penetration > 0.0 => Some(t),
        (Some(i), Some(t)) => Some(if i.penetration >= t.penetration { i } else { t }),
        (i, t) => i.or(t),
    }
}

/// The governing contact, if the object penetrates the appendage.
pub fn contact_candidate(
    geom: &GripperGeometry<f64>,
    state: &AppendageState<f64>,
    object: &SimObject,
) -> Option<Candidate> {
    facing_candidate(geom, state, object).filter(|c| c.penetration > 0.0)
}

/// Resolved contact carried in the world state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub side: Side,
    pub object: u32,
    pub segment: Segment,
    /// Object support point at the contact, world frame.
    pub point: Vec2<f64>,
    /// Surface normal toward the object, world frame.
    pub normal: Vec2<f64>,
    pub penetration: f64,
    /// Spring compression used for the force: the gap interference of a
    /// symmetric grasp with this penetration on both sides.
    pub compression: f64,
    /// Normal force (N), never negative.
    pub force: f64,
    /// Signed tape surface motion at the contact this tick (mm), positive
    /// away from the inner extruder.
    pub surface_displacement: f64,
    /// See [`Candidate::param`].
    pub param: f64,
    /// Distance from the inner extruder exit used as the sensing lever.
    pub lever: f64,
    pub estimate: Option<ForceEstimate>,
}

impl ContactReport {
    pub(crate) fn from_candidate(side: Side, object: u32, c: &Candidate, state: &AppendageState<f64>) -> Self {
        let lever = match c.segment {
            Segment::InnerSection => c.param,
            Segment::TipArc => state.l2,
        };
        ContactReport {
            side,
            object,
            segment: c.segment,
            point: c.point,
            normal: c.normal,
            penetration: c.penetration,
            compression: 2.0 * c.penetration,
            force: 0.0,
            surface_displacement: 0.0,
            param: c.param,
            lever,
            estimate: None,
        }
    }
}
