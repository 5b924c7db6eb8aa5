use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty record list")]
    EmptyRecords,
    #[error("analysis before any primary outcome")]
    NoPrimaryOutcome,
    #[error("zero total weight")]
    ZeroWeight,
    #[error("no eligible records: {0}")]
    EmptyStratum(String),
    #[error("degenerate variance estimate")]
    DegenerateVariance,
    #[error("inconsistent summary: efficiency denominator {0} is not in (0, 1]")]
    InconsistentSummary(f64),
    #[error("r undefined (no L-only participants)")]
    RatioUndefined,
    #[error("observation off support")]
    OffSupport,
    #[error("zero outcome variance in arm {0}")]
    ZeroOutcomeVariance(u8),
    #[error("matrix is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),
    #[error("design saturated: futility boundary {lower} is not below efficacy boundary {upper} at stage {stage}")]
    DesignSaturated { stage: usize, lower: f64, upper: f64 },
    #[error("estimator failed in {failed} of {total} simulated trials")]
    TooManyFailures { failed: usize, total: usize },
    #[error("sample-size bracket exhausted: power {power:.4} at n_max {n_max} is below target")]
    BracketExhausted { n_max: usize, power: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
