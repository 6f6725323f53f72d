use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: the two column vectors are parallel")]
    DegenerateRotation,
    #[error("matrix is not a rotation (orthonormality error {0:.3e})")]
    NotARotation(f64),
    #[error("sequence too short: need at least {need} frames, got {got}")]
    SequenceTooShort { need: usize, got: usize },
    #[error("audio too short: need at least {need_s} s, got {got_s:.3} s")]
    AudioTooShort { need_s: f64, got_s: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("model produced non-finite values: {0}")]
    ModelFailure(String),
    #[error("overlapping boundary primitives at frame {0}")]
    OverlapConflict(usize),
    #[error("no music beats")]
    NoMusicBeats,
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error("training diverged at step {step}: loss {loss}")]
    DivergedTraining { step: usize, loss: f64 },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Whether this error stems from a numerical failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::DegenerateRotation
            | Error::NotARotation(_)
            | Error::ModelFailure(_)
            | Error::DegenerateCovariance
            | Error::DivergedTraining { .. } => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

impl Error {
    /// Process exit status for the command line: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            e if e.is_numeric() => 4,
            _ => 3,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
