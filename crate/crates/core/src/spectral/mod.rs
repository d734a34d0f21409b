//! Exact analysis of finite chains.

mod eigen;
mod entropy;
mod generator;
mod logsob;
mod measure;
mod mixing;
mod semigroup;
mod state_space;

pub use eigen::{DENSE_EIGEN_CAP, GapMethod, gap_eigenfunction, spectral_gap, spectral_gap_with};
pub use entropy::{EntropyReport, entropy_production};
pub use generator::{GeneratorMatrix, build_generator, chain};
pub use logsob::{
    AchievedBy, DEFAULT_RESTARTS, LOGSOB_STATE_CAP, LogSobolevReport, entropy_of_square, entropy_variance_bound,
    log_sobolev_constant, log_sobolev_of_chain, log_sobolev_with, restricted_block_chain,
    restricted_block_log_sobolev, two_point_log_sobolev, variance,
};
pub use measure::{
    MeasureVector, check_detailed_balance, dirichlet_form, dirichlet_half_sum, dirichlet_site_variance,
    flux_imbalance, stationary_vector,
};
pub use mixing::{
    MIXING_STATE_CAP, MixingProfile, hitting_time_tail, hitting_time_tails, mixing_profile, t_mix_from,
    total_variation, worst_case_profile,
};
pub use semigroup::{evolve_distribution, evolve_function, expm_apply, expm_transpose_apply};
pub use state_space::{DEFAULT_STATE_CAP, Restriction, StateSpace, build_state_space, build_state_space_with_cap};
