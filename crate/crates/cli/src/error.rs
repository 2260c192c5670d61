use corgi_coach::CoachError;
use corgi_core::augment::AugmentError;
use corgi_core::backbone::BackboneError;
use corgi_core::envs::EnvError;
use corgi_core::eval::EvalError;
use corgi_core::model::ModelError;
use corgi_core::train::TrainError;
use corgi_core::traj::TrajError;

/// Exit code 2 for bad input, 1 for failures while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Validation(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        Self::Validation(msg.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

macro_rules! classify {
    ($ty:ty, |$e:ident| $is_validation:expr) => {
        impl From<$ty> for CliError {
            fn from($e: $ty) -> Self {
                if $is_validation {
                    Self::Validation($e.to_string())
                } else {
                    Self::Runtime($e.into())
                }
            }
        }
    };
}

classify!(TrajError, |e| matches!(
    e,
    TrajError::Invalid { .. }
        | TrajError::OversizeTrajectory { .. }
        | TrajError::DegenerateTrajectory(_)
        | TrajError::InvalidArgument(_)
        | TrajError::SchemaError { .. }
        | TrajError::DanglingRef(_)
        | TrajError::InvalidDataset(_)
        | TrajError::EmptySplit(_)
        | TrajError::Json(_)
));
classify!(EnvError, |e| !matches!(e, EnvError::Io(_)));
classify!(TrainError, |e| matches!(
    e,
    TrainError::Config(_) | TrainError::EmptySplit(_) | TrainError::FingerprintMismatch { .. }
));
classify!(BackboneError, |e| matches!(
    e,
    BackboneError::InvalidConfig(_) | BackboneError::Manifest(_) | BackboneError::EmptyText
));
classify!(EvalError, |e| matches!(e, EvalError::EmptySplit(_) | EvalError::NoCandidates(_) | EvalError::EmptyTrain));
classify!(ModelError, |_e| false);
classify!(AugmentError, |e| matches!(e, AugmentError::CacheCorruption { .. } | AugmentError::Traj(_)));
classify!(CoachError, |e| matches!(
    e,
    CoachError::Validation(_) | CoachError::UnknownStimulus(_) | CoachError::Traj(_) | CoachError::Env(_)
));

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Validation(e.to_string())
    }
}
