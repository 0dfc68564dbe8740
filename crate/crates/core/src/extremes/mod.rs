//! Law of the running maximum level, the phase at the first time it is
//! attained, and that time itself.

mod joint;
mod max_level;
mod taboo;

pub use joint::{
    assemble_joint_law, conditional_tau_mean, conditional_tau_moment, phase_moment_on_max,
    JointExtremeLaw, LawOptions, PeakEntry, DEFAULT_THETA_GRID,
};
pub use max_level::{algorithm_c, cdf_from_inverse, truncated_inverse, MaxLevelDistribution};
pub use taboo::{
    algorithm_a, algorithm_b, moment_residual, transform_residual, MomentTable, SweepCache,
    TabooTransformTable,
};
