//! Scripted runs of a session, recorded as a snapshot log.
//!
//! A scenario file is JSON:
//!
//! ```json
//! {
//!   "config": "../config/default.toml",
//!   "initial_pose": {"width": 100, "left": {"length": 600, "theta4": 0.785}, "right": {"length": 600, "theta4": 0.785}},
//!   "objects": [{"shape": {"kind": "circle", "radius": 25}, "pose": {"position": {"x": 0, "y": 350}}}],
//!   "script": [
//!     {"type": "primitive", "name": "auto_grip"},
//!     {"at_tick": 4000, "type": "reset"}
//!   ],
//!   "ticks": 20000,
//!   "until_idle": true
//! }
//! ```
//!
//! `config` is a path relative to the scenario file or an inline table, and
//! defaults to the built-in configuration. Script entries are client messages
//! (`protocol_version` may be omitted) with an optional `at_tick`. Timed
//! entries are applied before the tick with that number is stepped; untimed
//! entries are applied in order, each once the previous primitive has
//! finished. The run stops at the tick budget, or with `until_idle` as soon as
//! the script is exhausted and no primitive is running.
//!
//! The log holds one snapshot line for the initial world and one per tick.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::config::{load_config, ConfigError, SimConfig};
use crate::protocol::{ClientMessage, Command, ErrorCode, SessionEvent, PROTOCOL_VERSION};
use crate::session::{CommandError, Session};
use crate::sim::{InitialPose, Pose, Shape, SimError, WorldState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error("simulation failed at tick {tick}: {source}")]
    Sim { tick: u64, source: SimError },
    #[error("cannot write snapshot log: {0}")]
    Log(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigSource {
    Path(PathBuf),
    Inline(Box<SimConfig>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub at_tick: Option<u64>,
    pub message: ClientMessage,
}

impl ScriptEntry {
    pub fn timed(tick: u64, command: Command) -> Self {
        Self { at_tick: Some(tick), message: ClientMessage::new(command) }
    }

    pub fn queued(command: Command) -> Self {
        Self { at_tick: None, message: ClientMessage::new(command) }
    }
}

impl Serialize for ScriptEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut value = serde_json::to_value(&self.message).map_err(serde::ser::Error::custom)?;
        if let (Some(t), Some(map)) = (self.at_tick, value.as_object_mut()) {
            map.insert("at_tick".into(), t.into());
        }
        value.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScriptEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut value = serde_json::Value::deserialize(d)?;
        let map = value.as_object_mut().ok_or_else(|| D::Error::custom("script entries must be objects"))?;
        let at_tick = match map.remove("at_tick") {
            None => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| D::Error::custom("at_tick must be a non-negative integer"))?),
        };
        map.entry("protocol_version").or_insert(PROTOCOL_VERSION.into());
        let message = ClientMessage::deserialize(value).map_err(D::Error::custom)?;
        Ok(Self { at_tick, message })
    }
}

fn default_ticks() -> u64 {
    10_000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigSource>,
    #[serde(default)]
    pub initial_pose: InitialPose,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    /// Tick budget.
    #[serde(default = "default_ticks")]
    pub ticks: u64,
    #[serde(default = "yes")]
    pub until_idle: bool,
    /// Default snapshot-log path, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Configuration the scenario runs with; relative paths are resolved
    /// against `base`.
    pub fn resolve_config(&self, base: &Path) -> Result<SimConfig, ScenarioError> {
        match &self.config {
            None => Ok(SimConfig::default()),
            Some(ConfigSource::Inline(c)) => {
                c.validate()?;
                Ok((**c).clone())
            }
            Some(ConfigSource::Path(p)) => Ok(load_config(base.join(p))?),
        }
    }
}

/// Reads a scenario file, returning it with the directory its relative paths
/// are resolved against.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(Scenario, PathBuf), ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((Scenario::from_json(&text)?, base))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    /// Ticks stepped.
    pub ticks: u64,
    pub events: Vec<(u64, SessionEvent)>,
    /// Rejected script entries and the tick they were applied at, plus jogs
    /// stopped because the world could not follow them.
    pub rejected: Vec<(u64, CommandError)>,
    /// Whether the whole script was applied and the last primitive finished.
    pub completed: bool,
    /// World after the last tick.
    pub world: WorldState,
}

impl ScenarioRun {
    pub fn failures(&self) -> impl Iterator<Item = &(u64, SessionEvent)> {
        self.events.iter().filter(|(_, e)| e.is_failure())
    }

    pub fn first_rejection(&self, code: ErrorCode) -> Option<&(u64, CommandError)> {
        self.rejected.iter().find(|(_, e)| e.code == code)
    }
}

/// Runs `scenario`, passing every snapshot line to `log` in order.
pub fn run_scenario(
    scenario: &Scenario,
    config: SimConfig,
    mut log: impl FnMut(&str) -> std::io::Result<()>,
) -> Result<ScenarioRun, ScenarioError> {
    let mut session =
        Session::new(config, scenario.initial_pose).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    for obj in &scenario.objects {
        session
            .apply(&Command::SpawnObject { shape: obj.shape, pose: obj.pose })
            .map_err(|e| ScenarioError::Setup(format!("object: {e}")))?;
    }
    log(&session.snapshot()).map_err(ScenarioError::Log)?;

    let mut timed: Vec<(u64, &ClientMessage)> =
        scenario.script.iter().filter_map(|e| e.at_tick.map(|t| (t, &e.message))).collect();
    timed.sort_by_key(|(t, _)| *t);
    let mut timed: VecDeque<_> = timed.into();
    let mut queued: VecDeque<&ClientMessage> =
        scenario.script.iter().filter(|e| e.at_tick.is_none()).map(|e| &e.message).collect();

    let mut run = ScenarioRun {
        ticks: 0,
        events: Vec::new(),
        rejected: Vec::new(),
        completed: false,
        world: session.sim().state().clone(),
    };
    loop {
        let tick = session.sim().state().tick;
        while timed.front().is_some_and(|(t, _)| *t <= tick) {
            let (_, msg) = timed.pop_front().expect("front checked");
            if let Err(e) = session.apply(&msg.command) {
                run.rejected.push((tick, e));
            }
        }
        while session.is_idle() {
            let Some(msg) = queued.pop_front() else { break };
            if let Err(e) = session.apply(&msg.command) {
                run.rejected.push((tick, e));
            }
        }
        let finished = timed.is_empty() && queued.is_empty() && session.is_idle();
        if run.ticks >= scenario.ticks || (scenario.until_idle && finished) {
            run.completed = finished;
            run.world = session.sim().state().clone();
            break;
        }
        let events = match session.tick() {
            Ok(events) => events,
            // Only the jog can fail here. As in the service, it is stopped
            // and the world holds still for this tick.
            Err(e) => {
                session.stop_jog();
                run.rejected.push((tick, CommandError::from(e)));
                session.tick().map_err(|source| ScenarioError::Sim { tick, source })?
            }
        };
        run.ticks += 1;
        let now = session.sim().state().tick;
        run.events.extend(events.into_iter().map(|e| (now, e)));
        log(&session.snapshot()).map_err(ScenarioError::Log)?;
    }
    Ok(run)
}
