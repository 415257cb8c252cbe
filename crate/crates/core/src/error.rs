use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("raster of {width}x{height} is too small (need at least {min}x{min})")]
    RasterTooSmall { width: usize, height: usize, min: usize },

    #[error("query footprint under pose leaves the texture bounds")]
    OutOfBounds,

    #[error("descriptor dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("map image {0} has no pose")]
    MissingPose(u32),

    #[error("no features in any map image")]
    NoFeatures,

    #[error("vote grid is empty")]
    EmptyGrid,

    #[error("pose graph is not connected (node {0} unreachable from gauge)")]
    DisconnectedGraph(u32),

    #[error("unknown node {0} in pose graph")]
    UnknownNode(u32),

    #[error("frames {index} and {next} failed to register", next = index + 1)]
    BrokenChain { index: usize },

    #[error("not a TXDB file (bad magic)")]
    BadMagic,

    #[error("unsupported TXDB version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("TXDB file truncated")]
    Truncated,

    #[error("TXDB checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("TXDB file corrupt: {0}")]
    Corrupt(String),

    #[error("malformed {what} at line {line}: {msg}")]
    Parse { what: &'static str, line: usize, msg: String },

    #[error("image decode error for {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
