use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid velocity model: {0}")]
    VelocityModel(String),

    #[error("first arrival at receiver {receiver} (sample {sample}) falls beyond the last time step {last}")]
    ArrivalOutOfRange {
        receiver: usize,
        sample: usize,
        last: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no harmonic of {base_frequency} Hz lies below the Nyquist frequency {nyquist} Hz")]
    NoHarmonics { base_frequency: f64, nyquist: f64 },

    #[error("no rising-edge candidates in any column")]
    NoCandidates,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("checkpoint incompatible with configuration: {0}")]
    Architecture(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
