//! Gradient-estimator laboratory for binary restricted Boltzmann machines.
//!
//! The crate trains small RBMs with CD-1, draws single-example gradient
//! estimates under CD-k, PCD, I-CD-k and a long-chain baseline, and measures
//! the per-weight variance of those estimates.
//!
//! - [`rbm`]: parameters, conditionals, block Gibbs sampling, exact
//!   enumeration for small models.
//! - [`estimators`]: the gradient estimators.
//! - [`trainer`]: minibatch CD-1 training and `RBMCKPT1` checkpoints.
//! - [`variance`]: the variance measurement protocol and its aggregation.
//! - [`datasets`]: corpus ingestion, binarization and the `RBMDS1` container.
//! - [`rng`]: the keyed random streams everything draws from.

pub mod datasets;
pub mod error;
pub mod estimators;
pub mod rbm;
pub mod rng;
pub mod trainer;
pub mod variance;

pub use datasets::{binarize, Dataset};
pub use error::{Error, Result};
pub use estimators::{
    baseline_estimate, cd_k_estimate, icd_k_estimate, init_pcd_chain, negative_statistic,
    pcd_estimate, positive_statistic, GradientEstimate, PcdChainState, Strategy,
    DEFAULT_BASELINE_STEPS,
};
pub use rbm::{
    energy, exact_log_likelihood, exact_log_partition, exact_model_expectation, free_energy,
    gibbs_step, hidden_conditional, visible_conditional, BinaryHidden, BinaryState, BinaryVisible,
    HiddenProbs, RbmParams, VisibleProbs,
};
pub use rng::{RngStream, StreamKey};
pub use trainer::{init_params, train, Checkpoint, LrMode, TrainConfig};
pub use variance::{
    aggregate, per_element_variance, profile, profile_cd, profile_icd, profile_pcd_mean,
    AggregateRow, ProtocolConfig, ReportRow, VarianceReport,
};
