//! Schema-versioned JSON records of the world state.
//!
//! Floats are written in shortest round-trip form and parsed back exactly,
//! so `restore(snapshot(w)) == w` and identical worlds give identical bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::WorldState;

/// Bumped whenever the record layout changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u64, expected: u32 },
    #[error("snapshot has no schema_version field")]
    MissingVersion,
    #[error("malformed snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize)]
struct RecordRef<'a> {
    schema_version: u32,
    world: &'a WorldState,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[allow(dead_code)]
    schema_version: u32,
    world: WorldState,
}

/// One-line JSON record of `state`.
pub fn snapshot(state: &WorldState) -> String {
    serde_json::to_string(&RecordRef { schema_version: SCHEMA_VERSION, world: state })
        .expect("world state serialises")
}

pub fn restore(record: &str) -> Result<WorldState, SnapshotError> {
    check_version(record)?;
    let r: Record = serde_json::from_str(record)?;
    Ok(r.world)
}

/// Reads only the version field so that old layouts fail with a clear error
/// rather than a field mismatch.
pub fn check_version(record: &str) -> Result<(), SnapshotError> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: Option<serde_json::Value>,
    }
    let v: Version = serde_json::from_str(record)?;
    let found = v.schema_version.ok_or(SnapshotError::MissingVersion)?;
    match found.as_u64() {
        Some(n) if n == u64::from(SCHEMA_VERSION) => Ok(()),
        Some(n) => Err(SnapshotError::SchemaMismatch { found: n, expected: SCHEMA_VERSION }),
        None => Err(SnapshotError::MissingVersion),
    }
}
