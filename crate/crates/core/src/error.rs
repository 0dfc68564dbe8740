use thiserror::Error;

/// Errors raised by model construction, the linear-algebra kernels and the
/// extreme-value algorithms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("model definition error: {0}")]
    Model(String),

    #[error("state ({level}, {phase}) is out of range: level {level} has {phases} phases")]
    Coordinate {
        level: usize,
        phase: usize,
        phases: usize,
    },

    #[error("matrix is numerically singular at pivot {index} (|pivot| = {magnitude:e})")]
    Singular { index: usize, magnitude: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "maximum-level distribution did not reach 1 - epsilon by level {level} \
         (F_max = {cdf}); absorption may not be certain or the level cap is too small"
    )]
    NonConvergence { level: usize, cdf: f64 },

    #[error("conditional on I_max = {level} is undefined: P(I_max = {level}) = 0")]
    UndefinedConditional { level: usize },

    #[error("jump {jump} from ({first}, {second}) {reason}")]
    RateSpec {
        jump: &'static str,
        first: u64,
        second: u64,
        reason: String,
    },

    #[error("replication {replication} exceeded the event budget of {budget} events")]
    RunawayTrajectory { replication: u64, budget: u64 },

    #[error("resource limit: {0}")]
    Resource(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
