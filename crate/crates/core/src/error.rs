use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),
    #[error("invalid arrangement: {0}")]
    InvalidArrangement(String),
    #[error("unknown object id {0}")]
    UnknownObject(usize),
    #[error("object {0} is unloaded: required normal force is not positive")]
    ObjectUnloaded(usize),
    #[error("LP solver failure: {0}")]
    LpFailure(String),
    #[error("QP solver failure: {0}")]
    QpFailure(String),
    #[error("non-convex QP stage {0}")]
    NonConvex(usize),
    #[error("arrangement has no statically feasible solution: {0}")]
    InfeasibleArrangement(String),
    #[error("min-mu solver did not converge (stationarity residual {residual:.3e})")]
    MinMuNotConverged { residual: f64 },
    #[error("robust constraints require a minimum-friction solution")]
    MissingMinMu,
    #[error("policy stamped at {stamp} s is not valid at {time} s")]
    StalePolicy { stamp: f64, time: f64 },
}
