//! Experts, the product-of-experts combiner and its training procedures.

mod features;
mod io;
mod stack;
mod train;

pub use features::{featurize, ExpertRole, Featurizer};
pub use io::{decode_model, encode_model, read_model, write_model};
pub use stack::{empirical_prior_logits, Expert, PredictorStack, Variant, ABSENT_CLASS_LOGIT};
pub use train::{
    build_param_matched_ensemble, i2m2_parameter_count, matched_architectures,
    mean_cross_entropy, train_expert, train_stack, two_stage_train, DataSplit, Schedule,
    TrainConfig, TrainedStack,
};
