use thiserror::Error;

use crate::deformation::FlowTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: String, got: String },

    #[error("point has a non-finite coordinate at index {index}")]
    InvalidPoint { index: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence within flow time {flow_time}: best residual {}", .best.residual)]
    NonConvergence {
        best: Box<crate::solvers::Stationary>,
        flow_time: f64,
    },

    #[error("no root of the reduced scalar equation for pattern {0}")]
    NoSolution(String),

    #[error("setup inconsistent: {0}")]
    SetupInconsistent(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationError {
        t: f64,
        reason: String,
        partial: Option<Box<FlowTrace>>,
    },

    #[error("deformation contract violated: terminal energy {energy}, distance to exterior cluster {distance}")]
    DeformationFailure {
        energy: f64,
        distance: f64,
        trace: Box<FlowTrace>,
    },

    #[error("no sign change of the shot trajectory before t = {t_max}")]
    NoCrossing { t_max: f64 },

    #[error("cloud has no point at the origin")]
    OriginMissing,

    #[error("set is not in the genus family: {0}")]
    NotInGenusFamily(String),

    #[error("no negative sphere supremum found for j = {j}; best was {best}")]
    NoNegativeCertificate { j: usize, best: f64 },

    #[error("minimax bounds not monotone: c_{j} bound {lower} exceeds c_{next} bound {upper}", next = .j + 1)]
    MonotonicityViolation { j: usize, lower: f64, upper: f64 },

    #[error("internal invariant broken: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::DimensionError {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
