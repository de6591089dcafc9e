use std::path::PathBuf;

/// Errors raised across the world generator, policy, rewards and trainer.
#[derive(Debug, thiserror::Error)]
pub enum CoeError {
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid range: t_start {t_start} > t_end {t_end}")]
    InvalidRange { t_start: f64, t_end: f64 },

    #[error("sequence of length {len} exceeds context {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("group too small: need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),

    #[error("prompt has an empty option segment")]
    EmptyOptionSegment,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("fewer than two candidates ({0})")]
    FewerThanTwoCandidates(usize),

    #[error("no verdicts to aggregate")]
    EmptyVerdicts,

    #[error("reward unavailable: {0}")]
    RewardUnavailable(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("ablation cell {axis}={value} failed: {source}")]
    AblationCell {
        axis: String,
        value: String,
        #[source]
        source: Box<CoeError>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CoeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoeError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            CoeError::InvalidConfig(_)
                | CoeError::Json(_)
                | CoeError::InvalidRange { .. }
                | CoeError::FewerThanTwoCandidates(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CoeError>;
