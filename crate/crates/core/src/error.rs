use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has fewer than two vertices")]
    EmptyMesh,

    #[error("model produced no samples")]
    EmptyModel,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("model sampling produced {0} points, need at least 10")]
    TooFewSamples(usize),

    #[error("coincident points in feature computation")]
    CoincidentPoints,

    #[error("paired point lies on the reference normal axis")]
    DegeneratePair,

    #[error("vote space holds no mass")]
    EmptySpace,

    #[error("no pose hypotheses could be extracted")]
    NoHypotheses,

    #[error("no scene yielded an accepted pose")]
    NoAcceptedPose,

    #[error("registration diverged (mean residual {initial:.3e} -> {last:.3e})")]
    Diverged { initial: f64, last: f64 },

    #[error("camera {0} is already part of the pose graph")]
    DuplicateCamera(usize),

    #[error("pose graph is not connected over the participating cameras")]
    DisconnectedGraph,

    #[error("normal equations stayed singular after {retries} damping increases")]
    SingularNormalEquations { retries: usize },

    #[error("scene area must be positive")]
    NonPositiveSceneArea,

    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn malformed(offset: u64, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
