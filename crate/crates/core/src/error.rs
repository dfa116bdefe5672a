use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule parameters: {0}")]
    InvalidSchedule(String),

    #[error("schedule has already been rescaled to zero terminal SNR")]
    AlreadyRescaled,

    #[error("degenerate schedule: first and last signal coefficients are equal")]
    DegenerateSchedule,

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("epsilon parameterization undefined at timestep {t}: signal coefficient is zero")]
    ZeroSignal { t: usize },

    #[error("x0 parameterization undefined at timestep {t}: noise coefficient is zero")]
    ZeroNoise { t: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 4], got: [usize; 4] },

    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid conditioning: {0}")]
    InvalidConditioning(String),

    #[error("invalid guidance: {0}")]
    InvalidGuidance(String),

    #[error("strategy {0} requires a text-only prediction")]
    MissingTextOnly(&'static str),

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("non-finite value at sampling step {step} (timestep {t})")]
    NonFinite { step: usize, t: usize },

    #[error("non-finite training loss")]
    NonFiniteLoss,

    #[error("incomplete manifest entry: missing {0}")]
    IncompleteEntry(&'static str),

    #[error("invalid manifest entry: {0}")]
    InvalidEntry(String),

    #[error("invalid frames: {0}")]
    InvalidFrames(String),

    #[error("invalid vote data: {0}")]
    InvalidVotes(String),

    #[error("line {line}: {msg}")]
    VoteFile { line: u64, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ZeroSignal { .. }
                | Error::ZeroNoise { .. }
                | Error::NonFinite { .. }
                | Error::NonFiniteLoss
                | Error::DegenerateSchedule
                | Error::NonFiniteValue(_)
        )
    }
}
