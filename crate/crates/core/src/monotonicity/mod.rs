//! Sampled falsifiers for the monotonicity and convexity conditions, and
//! closed-form well-posedness thresholds.

mod beta;
mod checks;
pub mod sampler;
pub mod thresholds;

pub use beta::{check_beta_monotonicity, fit_lambda_gamma, sample_tuple, BetaTerms, BetaTuple};
pub use checks::{
    check_condition_separable, check_condition_split, check_displacement_quasi,
    check_generic_drift, check_mftc_convexity, check_small_mean_field_effect,
    replay_displacement_witness, GradientFn, TOLERANCE,
};
pub use sampler::{CoupledPair, CouplingSampler, PairScheme};
pub use thresholds::{
    anti_monotonicity_budget, budget_from_denominator, threshold_big_lambda,
    threshold_big_lambda_reduced, threshold_c_lt, Budget, CltVariant,
};
