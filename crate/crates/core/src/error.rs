use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {0} out of range for a two-class problem")]
    LabelOutOfRange(u8),
    #[error("parameter `{0}` has no gradient buffer")]
    MissingGradient(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("distance transform needs at least one site")]
    EmptySiteSet,
    #[error("no pixel passes the threshold {0}")]
    EmptyResult(f64),
    #[error("contour is degenerate: {0}")]
    DegenerateContour(String),
    #[error("closed contour does not separate interior from exterior")]
    OpenRegion,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("too few non-zero paired differences ({0}, need at least 6)")]
    TooFewSamples(usize),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    DivergedTraining { epoch: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::DivergedTraining { .. })
    }
}
