use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("measure must be nonnegative for {0}")]
    NotNonnegative(&'static str),

    #[error("scale {scale} is below the measure resolution {resolution}")]
    BelowResolution { scale: f64, resolution: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point lies on the kernel diagonal")]
    OnDiagonal,

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("no admissible cube found ({tried} candidates tried)")]
    NoAdmissibleCube { tried: usize },

    #[error("accretivity violated on cube at level {level}: {detail}")]
    NotAccretive { level: i32, detail: String },

    #[error("scale {0} lies outside the grid window")]
    OutsideWindow(i32),

    #[error("square-function tail does not decay")]
    NonConvergentTail,

    #[error("region is empty or unbounded")]
    BadRegion,

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
    }
}
