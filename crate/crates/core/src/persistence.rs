//! `.srj` artifact files: a JSON envelope around a reservoir, readout model
//! or trajectory, with a 64-bit checksum of the canonical payload.
//!
//! Floats are written in shortest round-trip form and parsed with full
//! precision, so save followed by load is bitwise exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::readout::{MlpModel, RidgeModel};
use crate::reservoir::{ReservoirSystem, StateTrajectory};

pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "srj";
/// Allowed gap between a stored and a recomputed spectral radius.
pub const RHO_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("unsupported format version {found} (supported: {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("invariant violated on load: {0}")]
    Invariant(String),
    #[error("expected a {expected} artifact, found {found}")]
    WrongKind { expected: ArtifactKind, found: ArtifactKind },
}

pub type Result<T> = std::result::Result<T, PersistenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Reservoir,
    Ridge,
    Mlp,
    Trajectory,
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArtifactKind::Reservoir => "reservoir",
            ArtifactKind::Ridge => "ridge",
            ArtifactKind::Mlp => "mlp",
            ArtifactKind::Trajectory => "trajectory",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Reservoir(ReservoirSystem),
    Ridge(RidgeModel),
    Mlp(MlpModel),
    Trajectory(StateTrajectory),
}

impl Artifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Reservoir(_) => ArtifactKind::Reservoir,
            Artifact::Ridge(_) => ArtifactKind::Ridge,
            Artifact::Mlp(_) => ArtifactKind::Mlp,
            Artifact::Trajectory(_) => ArtifactKind::Trajectory,
        }
    }

    /// Invariants checked on load. Bounded time: no dynamics are run.
    pub fn validate(&self) -> Result<()> {
        let bad = |e: String| PersistenceError::Invariant(e);
        match self {
            Artifact::Reservoir(r) => r.validate(RHO_CHECK_TOL).map_err(|e| bad(e.to_string())),
            Artifact::Ridge(m) => m.validate().map_err(|e| bad(e.to_string())),
            Artifact::Mlp(m) => m.validate().map_err(|e| bad(e.to_string())),
            Artifact::Trajectory(t) => t.validate().map_err(bad),
        }
    }

    fn payload(&self) -> serde_json::Result<Value> {
        match self {
            Artifact::Reservoir(r) => serde_json::to_value(r),
            Artifact::Ridge(m) => serde_json::to_value(m),
            Artifact::Mlp(m) => serde_json::to_value(m),
            Artifact::Trajectory(t) => serde_json::to_value(t),
        }
    }

    fn from_payload(kind: ArtifactKind, payload: Value) -> serde_json::Result<Self> {
        Ok(match kind {
            ArtifactKind::Reservoir => Artifact::Reservoir(serde_json::from_value(payload)?),
            ArtifactKind::Ridge => Artifact::Ridge(serde_json::from_value(payload)?),
            ArtifactKind::Mlp => Artifact::Mlp(serde_json::from_value(payload)?),
            ArtifactKind::Trajectory => Artifact::Trajectory(serde_json::from_value(payload)?),
        })
    }
}

impl From<ReservoirSystem> for Artifact {
    fn from(r: ReservoirSystem) -> Self {
        Artifact::Reservoir(r)
    }
}

impl From<RidgeModel> for Artifact {
    fn from(m: RidgeModel) -> Self {
        Artifact::Ridge(m)
    }
}

impl From<MlpModel> for Artifact {
    fn from(m: MlpModel) -> Self {
        Artifact::Mlp(m)
    }
}

impl From<StateTrajectory> for Artifact {
    fn from(t: StateTrajectory) -> Self {
        Artifact::Trajectory(t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format_version: u32,
    kind: ArtifactKind,
    payload: Value,
    checksum: String,
}

/// First 8 bytes of SHA-256 over the canonical payload encoding (compact
/// JSON, object keys sorted), as 16 lowercase hex digits.
pub fn checksum(payload: &Value) -> String {
    let bytes = serde_json::to_vec(payload).expect("a Value always serializes");
    let digest = Sha256::digest(&bytes);
    let word = u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    format!("{word:016x}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes an artifact to the envelope text.
pub fn to_string(artifact: &Artifact) -> Result<String> {
    artifact.validate()?;
    let payload = artifact.payload().map_err(|e| PersistenceError::Format(e.to_string()))?;
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: artifact.kind(),
        checksum: checksum(&payload),
        payload,
    };
    serde_json::to_string_pretty(&env).map_err(|e| PersistenceError::Format(e.to_string()))
}

/// Parses envelope text, checking version, checksum and invariants in that
/// order.
pub fn from_str(text: &str) -> Result<Artifact> {
    let raw: Value = serde_json::from_str(text).map_err(|e| PersistenceError::Format(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| PersistenceError::Format("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(PersistenceError::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    let env: Envelope = serde_json::from_value(raw).map_err(|e| PersistenceError::Format(e.to_string()))?;
    let computed = checksum(&env.payload);
    if computed != env.checksum {
        return Err(PersistenceError::Checksum {
            stored: env.checksum,
            computed,
        });
    }
    let artifact = Artifact::from_payload(env.kind, env.payload)
        .map_err(|e| PersistenceError::Invariant(format!("payload does not decode: {e}")))?;
    artifact.validate()?;
    Ok(artifact)
}

/// Writes atomically: a temporary sibling file is synced, then renamed.
pub fn save(artifact: &Artifact, path: &Path) -> Result<()> {
    let text = to_string(artifact)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| PersistenceError::Format(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn load(path: &Path) -> Result<Artifact> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_str(&text)
}

macro_rules! typed_loader {
    ($name:ident, $variant:ident, $ty:ty) => {
        pub fn $name(path: &Path) -> Result<$ty> {
            match load(path)? {
                Artifact::$variant(x) => Ok(x),
                other => Err(PersistenceError::WrongKind {
                    expected: ArtifactKind::$variant,
                    found: other.kind(),
                }),
            }
        }
    };
}

typed_loader!(load_reservoir, Reservoir, ReservoirSystem);
typed_loader!(load_ridge, Ridge, RidgeModel);
typed_loader!(load_mlp, Mlp, MlpModel);
typed_loader!(load_trajectory, Trajectory, StateTrajectory);
