use thiserror::Error;

/// Errors raised by model validation, simulation and the bound estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: String, step: Option<usize> },

    #[error("derivative check failed for {which} at t={t}, x={x:?}: relative error {rel_err:e}")]
    DerivativeMismatch {
        which: String,
        t: f64,
        x: Vec<f64>,
        rel_err: f64,
    },

    #[error("terminal value h(T, x) differs from g(x) by {gap:e} at x={x:?}")]
    TerminalMismatch { x: Vec<f64>, gap: f64 },

    #[error("time grid [{start}, {end}] does not match the problem horizon ending at {horizon}")]
    GridMismatch { start: f64, end: f64, horizon: f64 },

    #[error("Riccati flow left the admissible region at t={t} (P={p})")]
    RiccatiBlowup { t: f64, p: f64 },

    #[error("parameter outside its domain: {0}")]
    ParameterDomain(String),

    #[error("state dimension {0} is not supported by the pathwise dynamic program (max 2)")]
    UnsupportedDimension(usize),

    #[error("every vertex of the initial simplex was rejected")]
    AllCandidatesInvalid,

    #[error("estimates refer to different problems or evaluation points: {0}")]
    MismatchedProblem(String),

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::NonFinite { .. } => "NON_FINITE",
            Error::DerivativeMismatch { .. } => "DERIVATIVE_MISMATCH",
            Error::TerminalMismatch { .. } => "TERMINAL_MISMATCH",
            Error::GridMismatch { .. } => "GRID_MISMATCH",
            Error::RiccatiBlowup { .. } => "RICCATI_BLOWUP",
            Error::ParameterDomain(_) => "PARAMETER_DOMAIN",
            Error::UnsupportedDimension(_) => "UNSUPPORTED_DIMENSION",
            Error::AllCandidatesInvalid => "ALL_CANDIDATES_INVALID",
            Error::MismatchedProblem(_) => "MISMATCHED_PROBLEM",
            Error::UnknownId { kind: "problem", .. } => "UNKNOWN_PROBLEM",
            Error::UnknownId { kind: "family", .. } => "UNKNOWN_FAMILY",
            Error::UnknownId { .. } => "UNKNOWN_ID",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(v: f64, what: &str, step: Option<usize>) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}
