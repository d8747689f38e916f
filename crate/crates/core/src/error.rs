//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operand shapes do not conform for the named operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward already ran on this graph; build a fresh graph per step")]
    BackwardTwice,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("stft: {0}")]
    Stft(String),

    #[error("istft: {0}")]
    Istft(String),

    #[error("invalid band scheme: {0}")]
    BandScheme(String),

    #[error("snr: {0}")]
    Snr(String),

    #[error("wav {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    /// A config file or `--set` override used a key the schema does not know.
    #[error("unknown config key `{key}` in section [{section}]")]
    UnknownConfigKey { section: String, key: String },

    #[error("width {w} out of range 1..={max}")]
    WidthOutOfRange { w: usize, max: usize },

    #[error("depth {d} out of range 1..={max}")]
    DepthOutOfRange { d: usize, max: usize },

    #[error("non-finite loss at step {step} (sampled w={w}, d={d})")]
    NonFiniteLoss { step: usize, w: usize, d: usize },

    /// No subnetwork fits the requested budget; reports the cheapest row.
    #[error(
        "budget too small: minimum feasible cost is {min_params} params, \
         {min_macs:.0} MACs/s at (w=1, d=1)"
    )]
    BudgetTooSmall { min_params: u64, min_macs: f64 },

    #[error("checkpoint: bad magic (not a DWDN checkpoint)")]
    CheckpointMagic,

    #[error("checkpoint: unsupported format version {0}")]
    CheckpointVersion(u32),

    #[error("checkpoint: payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CheckpointChecksum { stored: u32, computed: u32 },

    #[error("checkpoint: array `{name}` has shape {found:?} but the embedded config implies {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
