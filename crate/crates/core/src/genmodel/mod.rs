//! The two-modality generative process with a selection mechanism, its exact
//! posterior, a brute-force enumeration oracle, and dataset transforms.

mod io;
mod posterior;
mod presets;
mod sampling;
mod spec;
mod transforms;

pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset};
pub use posterior::{
    argmax, bayes_accuracy, enumerate_joint, exact_posterior, log_joint_scores, JointTable,
    McEstimate,
};
pub use presets::{
    discrete_d1, gaussian_spec, preset, preset_spec, uniform_binary, GaussianDesign, PresetName,
    BOTH_DEPS, CONSTANT_ACCEPTANCE, INTER_WORLD, INTRA_WORLD, NEAR_DETERMINISTIC,
    SHIFT_MEANS_OFFSET, SPURIOUS_SHIFT,
};
pub use sampling::{
    log_selection_prob, sample_dataset, sample_dataset_with_stats, selection_prob, Dataset,
    Sample, SamplerStats, GUARD_MIN_ACCEPTANCE, GUARD_MIN_PROPOSALS,
};
pub use spec::{ClassConditional, GenerativeSpec, ModalityShape, Observation, SelectionModel};
pub use transforms::{apply_noise, collapse_means, make_ood_spec, NoiseMode, OodMode};
