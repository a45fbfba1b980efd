//! Variational EM: expected log-likelihoods, forward-backward, sufficient
//! statistics, the empirical ELBO and the training drivers.

mod adam;
mod elbo;
mod emission;
mod forward_backward;
mod stats;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, DEFAULT_LEARNING_RATE, EPSILON};
pub use elbo::{
    empirical_elbo, sample_unit_params, unit_data_term, ElboGradient, ElboOptions, ElboTerms, NoiseBank,
};
pub use emission::{expected_log_likelihoods, EmissionEstimator, EmissionScores};
pub use forward_backward::{forward_backward, Posteriors};
pub(crate) use forward_backward::check_shape;
pub use stats::{accumulate_stats, component_responsibilities, SufficientStats};
pub use train::{
    add_target_language, init_supervised, run_supervised, run_unsupervised, train_supervised,
    train_unsupervised, ElboReport, SourceCorpus, TrainConfig,
};
