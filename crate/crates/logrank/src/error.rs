use crate::stream_io::StreamUpdate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(f64),

    #[error("update out of range for {n_rows}x{n_cols} matrix: {update:?}")]
    UpdateOutOfRange {
        update: StreamUpdate,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("sketch shapes or seeds do not match: {0}")]
    SketchMismatch(String),

    #[error("stream parse error at line {line}: {msg}")]
    StreamParse { line: usize, msg: String },

    #[error("all level estimates are zero, nothing to sample")]
    NothingToSample,

    #[error("matrix has zero transformed mass, sampling probabilities undefined")]
    ZeroMass,

    #[error("matrix of {0} entries exceeds the dense (desk-scale) guard")]
    TooLargeForDense(usize),

    #[error("unknown norm estimate provider: {0:?}")]
    UnknownProvider(String),

    #[error("corrupt or unsupported serialized blob: {0}")]
    BadBlob(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for errors caused by bad inputs or configuration (CLI exit 1),
    /// `false` for failures that occur while running (CLI exit 2).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::NonFinite(_)
                | Error::UpdateOutOfRange { .. }
                | Error::StreamParse { .. }
                | Error::UnknownProvider(_)
                | Error::TooLargeForDense(_)
        )
    }
}
