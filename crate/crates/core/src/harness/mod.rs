//! Seeded experiment runs, aggregation and result files.

mod config;
mod records;
mod run;

pub use config::{ExperimentConfig, ModelVariant};
pub use records::{
    aggregate, decode_csv, decode_json, emit_csv, emit_json, encode_csv, encode_json, find, Aggregate,
    RunRecord, CSV_HEADER,
};
pub use run::{
    evaluation_metrics, output_paths, purpose_stream, reference_bayes_accuracy, run_comparison,
    run_entropy_report, run_experiment, run_noise_sweep, run_ood_eval, test_data, train_data, train_models,
    ExperimentKind, TrainedModel, BAYES_VARIANT,
};
