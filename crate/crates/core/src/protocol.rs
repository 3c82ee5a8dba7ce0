//! Message schema shared by the teleoperation service and the scenario runner.
//!
//! Every message is one JSON object. Client messages carry a mandatory
//! `protocol_version` and a `type` tag; unknown fields are rejected. Server
//! messages are tagged the same way. Over a socket each message is one text
//! frame; in files each message is one line.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{GripperGeometry, SimConfig};
use crate::control::{FailReason, ForceServoParams};
use crate::geometry::Vec2;
use crate::kinematics::{guide_ring, AppendageState, Side};
use crate::sim::{ContactReport, PerSide, Pose, Shape, SideSensing, SimObject, WorldEvent, WorldState};

pub const PROTOCOL_VERSION: u32 = 1;

/// Client request, without the version envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Persistent actuator rates for one appendage, plus the grip-width rate.
    /// Rates are clamped to the configured limits.
    Jog {
        side: Side,
        #[serde(default, rename = "dL1_rate")]
        outer_rate: f64,
        #[serde(default, rename = "dL2_rate")]
        inner_rate: f64,
        #[serde(default, rename = "dTheta4_rate")]
        theta4_rate: f64,
        #[serde(default, rename = "dWidth_rate")]
        width_rate: f64,
    },
    /// Straight-line move of one tip to a world point.
    Goto { side: Side, x: f64, y: f64 },
    Primitive {
        name: PrimitiveName,
        #[serde(default)]
        params: serde_json::Value,
    },
    SetServo(ForceServoParams),
    SpawnObject { shape: Shape, pose: Pose },
    /// Back to the initial configuration with no objects.
    Reset {},
    /// State stream rate for this client; ignored outside the service.
    Subscribe { rate_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveName {
    Grasp,
    Release,
    Translate,
    Rotate,
    Convey,
    AutoGrip,
}

impl PrimitiveName {
    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveName::Grasp => "grasp",
            PrimitiveName::Release => "release",
            PrimitiveName::Translate => "translate",
            PrimitiveName::Rotate => "rotate",
            PrimitiveName::Convey => "convey",
            PrimitiveName::AutoGrip => "auto_grip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspParams {
    pub object: u32,
    /// Contact force to close to (N); defaults to the auto-grip grasp force.
    #[serde(default)]
    pub force: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseParams {
    /// Every held object when absent.
    #[serde(default)]
    pub object: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateParams {
    pub object: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotateParams {
    pub object: u32,
    /// Commanded rotation (rad), counter-clockwise positive.
    pub angle: f64,
    /// Servo the grip width on the force estimate with the session settings.
    #[serde(default)]
    pub feedback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConveyParams {
    /// Surface travel (mm); positive toward the base.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoGripParamsMsg {}

/// A primitive request with typed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveCall {
    Grasp(GraspParams),
    Release(ReleaseParams),
    Translate(TranslateParams),
    Rotate(RotateParams),
    Convey(ConveyParams),
    AutoGrip,
}

impl PrimitiveCall {
    /// Parses `params` for `name`. A missing or null params field counts as
    /// an empty object.
    pub fn parse(name: PrimitiveName, params: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let params = if params.is_null() { serde_json::Value::Object(Default::default()) } else { params.clone() };
        Ok(match name {
            PrimitiveName::Grasp => PrimitiveCall::Grasp(serde_json::from_value(params)?),
            PrimitiveName::Release => PrimitiveCall::Release(serde_json::from_value(params)?),
            PrimitiveName::Translate => PrimitiveCall::Translate(serde_json::from_value(params)?),
            PrimitiveName::Rotate => PrimitiveCall::Rotate(serde_json::from_value(params)?),
            PrimitiveName::Convey => PrimitiveCall::Convey(serde_json::from_value(params)?),
            PrimitiveName::AutoGrip => {
                let AutoGripParamsMsg {} = serde_json::from_value(params)?;
                PrimitiveCall::AutoGrip
            }
        })
    }
}

/// A versioned client message.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientMessage {
    pub protocol_version: u32,
    pub command: Command,
}

impl ClientMessage {
    pub fn new(command: Command) -> Self {
        Self { protocol_version: PROTOCOL_VERSION, command }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client message serialises")
    }
}

impl Serialize for ClientMessage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut value = serde_json::to_value(&self.command).map_err(serde::ser::Error::custom)?;
        let map = value.as_object_mut().ok_or_else(|| serde::ser::Error::custom("command is not an object"))?;
        map.insert("protocol_version".into(), self.protocol_version.into());
        value.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClientMessage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut value = serde_json::Value::deserialize(d)?;
        let map = value.as_object_mut().ok_or_else(|| D::Error::custom("message must be a JSON object"))?;
        let version = map.remove("protocol_version").ok_or_else(|| D::Error::missing_field("protocol_version"))?;
        let version = version
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| D::Error::custom("protocol_version must be a non-negative integer"))?;
        if version != PROTOCOL_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported protocol_version {version} (this server speaks {PROTOCOL_VERSION})"
            )));
        }
        let command = Command::deserialize(value).map_err(D::Error::custom)?;
        Ok(Self { protocol_version: version, command })
    }
}

/// Geometry of one appendage in the world frame, enough to draw it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendageSummary {
    pub side: Side,
    pub length: f64,
    pub theta4: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub l1: f64,
    pub l2: f64,
    pub a: f64,
    pub r: f64,
    pub outer_exit: Vec2<f64>,
    pub inner_exit: Vec2<f64>,
    pub guide_ring: Vec2<f64>,
    pub outer_tangent: Vec2<f64>,
    pub inner_tangent: Vec2<f64>,
    /// Rolling-joint centre.
    pub tip: Vec2<f64>,
}

impl AppendageSummary {
    pub fn new(geom: &GripperGeometry<f64>, st: &AppendageState<f64>) -> Self {
        let w = |p: Vec2<f64>| st.side.to_world(geom, p);
        Self {
            side: st.side,
            length: st.length,
            theta4: st.theta4,
            theta1: st.theta1,
            theta2: st.theta2,
            l1: st.l1,
            l2: st.l2,
            a: st.a,
            r: st.r,
            outer_exit: w(Vec2::zero()),
            inner_exit: w(st.inner_exit(geom)),
            guide_ring: w(guide_ring(geom, st.theta4)),
            outer_tangent: w(st.outer_tangent()),
            inner_tangent: w(st.inner_tangent(geom)),
            tip: w(st.tip),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePrimitive {
    pub name: String,
    pub phase: Option<String>,
}

/// Broadcast world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub width: f64,
    pub left: AppendageSummary,
    pub right: AppendageSummary,
    pub objects: Vec<SimObject>,
    pub contacts: Vec<ContactReport>,
    pub sensing: PerSide<SideSensing>,
    pub primitive: Option<ActivePrimitive>,
}

impl StateFrame {
    pub fn new(config: &SimConfig, world: &WorldState, primitive: Option<ActivePrimitive>) -> Self {
        let g = &config.geometry;
        Self {
            tick: world.tick,
            width: world.width,
            left: AppendageSummary::new(g, &world.left),
            right: AppendageSummary::new(g, &world.right),
            objects: world.objects.clone(),
            contacts: world.contacts.clone(),
            sensing: world.sensing,
            primitive,
        }
    }
}

/// Outcome of a primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PrimitiveEvent {
    PrimitiveDone { name: String },
    PrimitiveFailed { name: String, reason: FailReason },
}

/// Anything the client is told happened during a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SessionEvent {
    World(WorldEvent),
    Primitive(PrimitiveEvent),
}

impl SessionEvent {
    /// Object loss or buckling, directly or as the reason a primitive failed.
    pub fn is_failure(&self) -> bool {
        match self {
            SessionEvent::World(e) => e.is_failure(),
            SessionEvent::Primitive(PrimitiveEvent::PrimitiveFailed { .. }) => true,
            SessionEvent::Primitive(PrimitiveEvent::PrimitiveDone { .. }) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON or not a valid message.
    BadRequest,
    /// Another primitive is running.
    Busy,
    InvalidParams,
    OutOfWorkspace,
    UnknownObject,
    NotHeld,
    /// Unexpected simulator failure; the world is left as it was.
    Internal,
}

/// Configuration digest sent on connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub tick_dt: f64,
    pub contact_threshold: f64,
    pub geometry: GripperGeometry<f64>,
    pub servo: ForceServoParams,
}

impl From<&SimConfig> for ConfigSummary {
    fn from(c: &SimConfig) -> Self {
        Self { tick_dt: c.tick_dt, contact_threshold: c.contact_threshold, geometry: c.geometry, servo: c.servo }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { protocol_version: u32, config: ConfigSummary },
    State(StateFrame),
    Event { tick: u64, event: SessionEvent },
    Error { code: ErrorCode, message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ClientMessage, serde_json::Error> {
        serde_json::from_str(s)
    }

    #[test]
    fn version_is_mandatory() {
        assert!(parse(r#"{"type":"reset"}"#).is_err());
        assert!(parse(r#"{"type":"reset","protocol_version":2}"#).is_err());
        assert!(parse(r#"{"type":"reset","protocol_version":1}"#).is_ok());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"protocol_version":1,"type":"goto","side":"left","x":0,"y":300,"z":1}"#;
        assert!(parse(bad).is_err());
        let bad = r#"{"protocol_version":1,"type":"set_servo","f_desired":1,"kp":2,"deadband":0.05,"width_rate_limit":50,"gain":3}"#;
        assert!(parse(bad).is_err());
        assert!(parse(r#"{"protocol_version":1,"type":"warp"}"#).is_err());
    }

    #[test]
    fn jog_uses_rate_field_names() {
        let m = parse(r#"{"protocol_version":1,"type":"jog","side":"right","dL1_rate":5,"dTheta4_rate":0.1}"#).unwrap();
        let Command::Jog { side, outer_rate, inner_rate, theta4_rate, width_rate } = m.command else { panic!() };
        assert_eq!((side, outer_rate, inner_rate, theta4_rate, width_rate), (Side::Right, 5.0, 0.0, 0.1, 0.0));
    }

    #[test]
    fn client_messages_round_trip() {
        let cmds = [
            Command::Goto { side: Side::Left, x: -10.0, y: 300.5 },
            Command::Primitive { name: PrimitiveName::Rotate, params: serde_json::json!({"object": 1, "angle": 1.5}) },
            Command::SetServo(ForceServoParams::default()),
            Command::SpawnObject {
                shape: Shape::Ellipse { semi_major: 20.0, semi_minor: 10.0 },
                pose: Pose { position: Vec2::new(0.0, 400.0), orientation: 0.25 },
            },
            Command::Reset {},
            Command::Subscribe { rate_hz: 30.0 },
        ];
        for c in cmds {
            let m = ClientMessage::new(c);
            assert_eq!(parse(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn primitive_params_are_typed() {
        let p = serde_json::json!({"object": 3, "angle": 1.0});
        assert_eq!(
            PrimitiveCall::parse(PrimitiveName::Rotate, &p).unwrap(),
            PrimitiveCall::Rotate(RotateParams { object: 3, angle: 1.0, feedback: false })
        );
        assert!(PrimitiveCall::parse(PrimitiveName::Rotate, &serde_json::json!({"object": 3})).is_err());
        assert!(PrimitiveCall::parse(PrimitiveName::Convey, &serde_json::json!({"distance": 1, "x": 0})).is_err());
        assert_eq!(PrimitiveCall::parse(PrimitiveName::AutoGrip, &serde_json::Value::Null).unwrap(), PrimitiveCall::AutoGrip);
        assert_eq!(
            PrimitiveCall::parse(PrimitiveName::Release, &serde_json::Value::Null).unwrap(),
            PrimitiveCall::Release(ReleaseParams { object: None })
        );
    }

    #[test]
    fn events_serialise_flat() {
        let e = SessionEvent::World(WorldEvent::ObjectDropped { object: 2 });
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"event":"object_dropped","object":2}"#);
        let e = SessionEvent::Primitive(PrimitiveEvent::PrimitiveFailed {
            name: "auto_grip".into(),
            reason: FailReason::NoObjectFound,
        });
        let text = serde_json::to_string(&e).unwrap();
        assert_eq!(text, r#"{"event":"primitive_failed","name":"auto_grip","reason":{"reason":"no_object_found"}}"#);
        assert_eq!(serde_json::from_str::<SessionEvent>(&text).unwrap(), e);
    }
}
