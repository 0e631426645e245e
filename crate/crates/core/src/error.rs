//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // -- raster store --
    #[error("unknown layer: {0}")]
    UnknownLayer(String),
    #[error("malformed ingest header: {0}")]
    MalformedHeader(String),
    #[error("non-finite pixel value {value} at index {index} (only NaN is a valid nodata sentinel)")]
    NonFiniteSample { index: usize, value: f32 },
    #[error("snapshot already exists for layer {layer} at {timestamp} (pass overwrite to replace)")]
    SnapshotExists { layer: String, timestamp: String },
    #[error("layer {layer} already registered with band role {existing}, got {requested}")]
    LayerConflict {
        layer: String,
        existing: String,
        requested: String,
    },
    #[error("window entirely outside coverage of layer {layer}")]
    WindowOutOfCoverage { layer: String },
    #[error("no snapshot of layer {layer} within {window_secs}s of requested time")]
    NoTemporalMatch { layer: String, window_secs: i64 },
    #[error("timestamp parse: {0}")]
    BadTimestamp(String),

    // -- query protocol --
    #[error("query syntax: {0}")]
    QuerySyntax(String),
    #[error("query field {field}: {message}")]
    QueryType { field: String, message: String },
    #[error("unknown architecture: {0}")]
    UnknownArchitecture(String),
    #[error("query failed validation: {0}")]
    InvalidQuery(String),

    // -- assembly / filters / features --
    #[error("patch assembly produced no usable samples")]
    AssemblyEmpty,
    #[error("statistic undefined: {0}")]
    StatsUndefined(String),
    #[error("GLCM contrast undefined for windows smaller than 2 pixels")]
    GlcmUndefined,
    #[error("band selector out of range: {0}")]
    BandOutOfRange(String),
    #[error("cannot resolve band role {0}")]
    UnknownBandRole(String),
    #[error("feature spec: {0}")]
    BadFeatureSpec(String),

    // -- models --
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training input degenerate: {0}")]
    DegenerateTraining(String),
    #[error("class {class} has {available} samples after filtering; needs more than {required}")]
    InsufficientClassSamples {
        class: String,
        available: usize,
        required: usize,
    },

    // -- registry / orchestration --
    #[error("unknown model id: {0}")]
    UnknownModel(String),
    #[error("invalid model id {0:?}: use letters, digits, '.', '_' or '-'")]
    BadModelId(String),
    #[error("model id {0} already exists (pass overwrite to replace)")]
    ModelExists(String),
    #[error("registry entry corrupt: {0}")]
    RegistryCorrupt(String),
    #[error("model blob format version {got} unsupported (expected {expected})")]
    BlobVersion { expected: u32, got: u32 },
    #[error("model blob corrupt: {0}")]
    BlobCorrupt(String),

    // -- synthetic worlds --
    #[error("world spec invalid: {0}")]
    BadWorldSpec(String),
    #[error("ground truth: {0}")]
    BadGroundTruth(String),

    #[error("manifest: {0}")]
    BadManifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
