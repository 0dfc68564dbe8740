//! Exact law of the running maximum of a level-dependent quasi-birth-death
//! process before it first enters level 0, together with the phase and the
//! time at which that maximum is first attained.
//!
//! The main entry points are [`algorithm_c`] (distribution of the maximum
//! level), [`algorithm_a`]/[`algorithm_b`] (taboo transforms and moments of
//! first-passage times) and [`assemble_joint_law`], which combines them.
//! [`oracle`] holds two independent checks: a Gillespie simulator and a
//! brute-force solver over the chain augmented with its running maximum.

pub mod epidemic;
pub mod error;
pub mod extremes;
pub mod linalg;
pub mod model;
pub mod oracle;

pub use epidemic::{
    build_from_rates, build_sir_qbd, build_sis_population_qbd, recovered_at_peak_law,
    BivariateRateSpec, RecoveredLaw, SirModel, SirParams, SisModel, SisParams,
};
pub use error::{Error, Result};
pub use extremes::{
    algorithm_a, algorithm_b, algorithm_c, assemble_joint_law, conditional_tau_mean,
    conditional_tau_moment, phase_moment_on_max, JointExtremeLaw, LawOptions,
    MaxLevelDistribution, MomentTable, PeakEntry, SweepCache, TabooTransformTable,
    DEFAULT_THETA_GRID,
};
pub use linalg::{extend_inverse, solve_linear, DenseMatrix, TruncatedGeneratorInverse};
pub use model::{
    state_index, validate_generator, BirthDeath, CappedModel, LevelBlocks, QbdModel, StateCoord,
    TabulatedQbd, Violation,
};
pub use oracle::{
    exact_augmented_law, simulate_extremes, AugmentedChainLaw, SimulationOptions, TrajectoryStats,
};
