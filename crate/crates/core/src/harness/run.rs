use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ModelVariant};
use super::records::RunRecord;
use crate::error::{Error, Result};
use crate::genmodel::{
    apply_noise, argmax, bayes_accuracy, enumerate_joint, exact_posterior, make_ood_spec,
    preset_spec, sample_dataset, Dataset, GenerativeSpec,
};
use crate::metrics::evaluate;
use crate::nncore::RngStream;
use crate::predictors::{build_param_matched_ensemble, train_stack, PredictorStack, Schedule, Variant};

/// Pseudo-variant carrying Bayes-optimal reference numbers.
pub const BAYES_VARIANT: &str = "bayes";

/// Experiment kinds; each has its own digest and output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Comparison,
    NoiseSweep,
    Ood,
    Entropy,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Comparison => "compare",
            ExperimentKind::NoiseSweep => "sweep-noise",
            ExperimentKind::Ood => "ood",
            ExperimentKind::Entropy => "entropy",
        }
    }
}

/// Stream of `seed` reserved for `purpose`. Keyed by name so a run's draws
/// do not depend on which other variants or noise levels are configured.
pub fn purpose_stream(seed: u64, purpose: &str) -> RngStream {
    let hash = Sha256::digest(purpose.as_bytes());
    let mut id = [0u8; 8];
    id.copy_from_slice(&hash[..8]);
    RngStream::derive(seed, u64::from_le_bytes(id))
}

pub fn train_data(spec: &GenerativeSpec, config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    sample_dataset(spec, config.n_train, &mut purpose_stream(seed, "train-data"))
}

pub fn test_data(spec: &GenerativeSpec, config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    sample_dataset(spec, config.n_test, &mut purpose_stream(seed, "test-data"))
}

/// `(csv, json)` paths under `<output_dir>/<preset>/<digest>`.
pub fn output_paths(config: &ExperimentConfig, kind: ExperimentKind) -> (PathBuf, PathBuf) {
    let base = config
        .output_dir
        .join(config.preset.as_str())
        .join(config.digest(kind.as_str()));
    (base.with_extension("csv"), base.with_extension("json"))
}

/// Exact for categorical specs, Monte-Carlo otherwise.
pub fn reference_bayes_accuracy(spec: &GenerativeSpec, n_mc: usize, rng: &mut RngStream) -> Result<f64> {
    if spec.modality_1.shape().is_categorical() && spec.modality_2.shape().is_categorical() {
        Ok(enumerate_joint(spec)?.bayes_accuracy())
    } else {
        Ok(bayes_accuracy(spec, n_mc, rng)?.estimate)
    }
}

/// A trained model, or the message of the failure that prevented it.
pub struct TrainedModel {
    pub variant: ModelVariant,
    pub stack: std::result::Result<PredictorStack, String>,
    pub seconds: f64,
}

/// Trains every configured variant for one seed. The three-expert stack is
/// trained once and shared by all of its restrictions.
pub fn train_models(config: &ExperimentConfig, train: &Dataset, seed: u64) -> Vec<TrainedModel> {
    let needs_stack = config
        .variants
        .iter()
        .any(|v| matches!(v, ModelVariant::Stack(_) | ModelVariant::PretrainOnly));
    let started = Instant::now();
    let shared = needs_stack.then(|| {
        train_stack(train, &config.train, &mut purpose_stream(seed, "fit")).map_err(|e| e.to_string())
    });
    let shared_seconds = started.elapsed().as_secs_f64();

    config
        .variants
        .iter()
        .map(|variant| {
            let started = Instant::now();
            let (stack, seconds) = match variant {
                ModelVariant::Stack(v) => {
                    let built = match shared.as_ref().expect("stack trained") {
                        Ok(t) if *v == Variant::I2m2 => Ok(t.stack.clone()),
                        Ok(t) => t.stage1.restrict(*v).map_err(|e| e.to_string()),
                        Err(e) => Err(e.clone()),
                    };
                    (built, shared_seconds)
                }
                ModelVariant::PretrainOnly => {
                    let built = match shared.as_ref().expect("stack trained") {
                        Ok(t) => Ok(t.stage1.clone()),
                        Err(e) => Err(e.clone()),
                    };
                    (built, shared_seconds)
                }
                ModelVariant::FromScratch => {
                    let mut cfg = config.train.clone();
                    cfg.schedule = Schedule::JointFromScratch;
                    let built = train_stack(train, &cfg, &mut purpose_stream(seed, "fit"))
                        .map(|t| t.stack)
                        .map_err(|e| e.to_string());
                    (built, started.elapsed().as_secs_f64())
                }
                ModelVariant::Ensemble(roles) => {
                    let mut rng = purpose_stream(seed, &format!("ensemble:{variant}"));
                    let built = build_param_matched_ensemble(train, &config.train, roles, &mut rng)
                        .map_err(|e| e.to_string());
                    (built, started.elapsed().as_secs_f64())
                }
            };
            TrainedModel {
                variant: variant.clone(),
                stack,
                seconds,
            }
        })
        .collect()
}

/// All [`evaluate`] metrics of `stack` on `test`, with `suffix` appended to
/// each name.
pub fn evaluation_metrics(stack: &PredictorStack, test: &Dataset, suffix: &str) -> Result<BTreeMap<String, f64>> {
    let probs = stack.predict_proba_batch(test.samples())?;
    let report = evaluate(&probs, &test.labels())?;
    Ok(report
        .metrics
        .into_iter()
        .map(|(k, v)| (format!("{k}{suffix}"), v))
        .collect())
}

struct Recorder<'a> {
    config: &'a ExperimentConfig,
    digest: String,
    seed: u64,
}

impl Recorder<'_> {
    fn record(
        &self,
        variant: String,
        outcome: std::result::Result<BTreeMap<String, f64>, String>,
        seconds: f64,
    ) -> RunRecord {
        let (metrics, error) = match outcome {
            Ok(m) if m.values().all(|v| v.is_finite()) => (m, None),
            Ok(_) => (BTreeMap::new(), Some("non-finite metric".to_string())),
            Err(e) => (BTreeMap::new(), Some(e)),
        };
        RunRecord {
            config_digest: self.digest.clone(),
            preset: self.config.preset.to_string(),
            variant,
            seed: self.seed,
            metrics,
            wall_seconds: if self.config.timing { seconds } else { 0.0 },
            error,
        }
    }

    /// One error record per configured variant.
    fn fail_all(&self, err: &Error) -> Vec<RunRecord> {
        self.config
            .variants
            .iter()
            .map(|v| self.record(v.to_string(), Err(err.to_string()), 0.0))
            .collect()
    }

    /// Evaluates each trained model with `eval`.
    fn evaluate_models<F>(&self, models: &[TrainedModel], eval: F) -> Vec<RunRecord>
    where
        F: Fn(&PredictorStack) -> Result<BTreeMap<String, f64>>,
    {
        models
            .iter()
            .map(|m| {
                let started = Instant::now();
                let outcome = match &m.stack {
                    Ok(stack) => eval(stack).map_err(|e| e.to_string()),
                    Err(msg) => Err(msg.clone()),
                };
                let seconds = m.seconds + started.elapsed().as_secs_f64();
                self.record(m.variant.to_string(), outcome, seconds)
            })
            .collect()
    }
}

fn run_seeds<F>(config: &ExperimentConfig, kind: ExperimentKind, per_seed: F) -> Result<Vec<RunRecord>>
where
    F: Fn(&Recorder<'_>) -> Result<Vec<RunRecord>> + Sync,
{
    config.validate()?;
    let digest = config.digest(kind.as_str());
    let per_seed_records: Vec<Vec<RunRecord>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let recorder = Recorder {
                config,
                digest: digest.clone(),
                seed,
            };
            per_seed(&recorder).unwrap_or_else(|e| recorder.fail_all(&e))
        })
        .collect();
    let mut records: Vec<RunRecord> = per_seed_records.into_iter().flatten().collect();
    records.sort_by(|a, b| (&a.variant, a.seed).cmp(&(&b.variant, b.seed)));
    Ok(records)
}

/// Trains every variant per seed and evaluates it on a fresh test draw from
/// the same preset. Adds one Bayes-accuracy record per seed.
pub fn run_comparison(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let spec = preset_spec(config.preset)?;
    run_seeds(config, ExperimentKind::Comparison, |rec| {
        let train = train_data(&spec, config, rec.seed)?;
        let test = test_data(&spec, config, rec.seed)?;
        let models = train_models(config, &train, rec.seed);
        let mut records = rec.evaluate_models(&models, |stack| evaluation_metrics(stack, &test, ""));
        let bayes = reference_bayes_accuracy(&spec, config.bayes_samples, &mut purpose_stream(rec.seed, "bayes"))
            .map(|a| BTreeMap::from([("accuracy".to_string(), a)]));
        records.push(rec.record(BAYES_VARIANT.to_string(), bayes.map_err(|e: Error| e.to_string()), 0.0));
        Ok(records)
    })
}

/// Trains once per seed on clean data, then evaluates on noisy copies of the
/// test set. Metric names carry the level, e.g. `auroc@sigma=0.25`. The σ=0
/// copy equals the clean test set of [`run_comparison`].
pub fn run_noise_sweep(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let spec = preset_spec(config.preset)?;
    if spec.modality_1.shape().is_categorical() || spec.modality_2.shape().is_categorical() {
        return Err(Error::Unsupported(format!(
            "noise sweeps need a gaussian preset, `{}` is categorical",
            config.preset
        )));
    }
    run_seeds(config, ExperimentKind::NoiseSweep, |rec| {
        let train = train_data(&spec, config, rec.seed)?;
        let test = test_data(&spec, config, rec.seed)?;
        let noisy: Vec<(f64, Dataset)> = config
            .noise_grid
            .iter()
            .map(|&sigma| {
                let mut rng = purpose_stream(rec.seed, &format!("noise:{sigma}"));
                Ok((sigma, apply_noise(&test, config.noise_mode, sigma, &mut rng)?))
            })
            .collect::<Result<_>>()?;
        let models = train_models(config, &train, rec.seed);
        Ok(rec.evaluate_models(&models, |stack| {
            let mut all = BTreeMap::new();
            for (sigma, data) in &noisy {
                all.extend(evaluation_metrics(stack, data, &format!("@sigma={sigma}"))?);
            }
            Ok(all)
        }))
    })
}

/// Trains on the preset and evaluates on an in-distribution draw (`@iid`)
/// and on a draw from `make_ood_spec(preset, ood_mode)` (`@ood`). The Bayes
/// record holds each spec's own Bayes accuracy and the accuracy of the
/// training-spec posterior on the shifted test set.
pub fn run_ood_eval(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let spec = preset_spec(config.preset)?;
    let ood_spec = make_ood_spec(&spec, config.ood_mode)?;
    run_seeds(config, ExperimentKind::Ood, |rec| {
        let train = train_data(&spec, config, rec.seed)?;
        let iid = test_data(&spec, config, rec.seed)?;
        let ood = sample_dataset(&ood_spec, config.n_test, &mut purpose_stream(rec.seed, "ood-test-data"))?;
        let models = train_models(config, &train, rec.seed);
        let mut records = rec.evaluate_models(&models, |stack| {
            let mut all = evaluation_metrics(stack, &iid, "@iid")?;
            all.extend(evaluation_metrics(stack, &ood, "@ood")?);
            Ok(all)
        });
        let bayes = (|| {
            let mut rng = purpose_stream(rec.seed, "bayes");
            let mut m = BTreeMap::new();
            m.insert(
                "accuracy@iid".to_string(),
                reference_bayes_accuracy(&spec, config.bayes_samples, &mut rng)?,
            );
            m.insert(
                "accuracy@ood".to_string(),
                reference_bayes_accuracy(&ood_spec, config.bayes_samples, &mut rng)?,
            );
            let mut hits = 0usize;
            for s in ood.samples() {
                if argmax(&exact_posterior(&spec, &s.x, &s.x_prime)?) == s.y {
                    hits += 1;
                }
            }
            m.insert(
                "train_posterior_accuracy@ood".to_string(),
                hits as f64 / ood.len() as f64,
            );
            Ok(m)
        })();
        records.push(rec.record(BAYES_VARIANT.to_string(), bayes.map_err(|e: Error| e.to_string()), 0.0));
        Ok(records)
    })
}

/// Predictive entropy of each variant and the label entropy of the test set,
/// in nats.
pub fn run_entropy_report(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let spec = preset_spec(config.preset)?;
    run_seeds(config, ExperimentKind::Entropy, |rec| {
        let train = train_data(&spec, config, rec.seed)?;
        let test = test_data(&spec, config, rec.seed)?;
        let models = train_models(config, &train, rec.seed);
        Ok(rec.evaluate_models(&models, |stack| {
            let mut m = evaluation_metrics(stack, &test, "")?;
            m.retain(|k, _| k == "entropy" || k == "label_entropy");
            Ok(m)
        }))
    })
}

/// Dispatches on `kind`.
pub fn run_experiment(config: &ExperimentConfig, kind: ExperimentKind) -> Result<Vec<RunRecord>> {
    match kind {
        ExperimentKind::Comparison => run_comparison(config),
        ExperimentKind::NoiseSweep => run_noise_sweep(config),
        ExperimentKind::Ood => run_ood_eval(config),
        ExperimentKind::Entropy => run_entropy_report(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::PresetName;
    use crate::harness::records::{aggregate, encode_csv, find};

    fn small(preset: PresetName) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            preset,
            n_train: 600,
            n_test: 400,
            bayes_samples: 2000,
            seeds: vec![3, 4],
            ..ExperimentConfig::default()
        };
        c.train.epochs_stage1 = 5;
        c.train.epochs_stage2 = 3;
        c
    }

    #[test]
    fn streams_differ_by_purpose() {
        let mut a = purpose_stream(1, "train-data");
        let mut b = purpose_stream(1, "test-data");
        let mut a2 = purpose_stream(1, "train-data");
        let x = a.uniform();
        assert_ne!(x, b.uniform());
        assert_eq!(x, a2.uniform());
    }

    #[test]
    fn comparison_has_every_variant_and_bayes() {
        let config = small(PresetName::BothDeps);
        let records = run_comparison(&config).unwrap();
        assert_eq!(records.len(), 2 * (config.variants.len() + 1));
        assert!(records.iter().all(|r| r.error.is_none()));
        let agg = aggregate(&records);
        assert!(find(&agg, "bayes", "accuracy").is_some());
        assert!(find(&agg, "i2m2", "auroc").is_some());
        assert!(records.iter().all(|r| r.wall_seconds == 0.0));
    }

    #[test]
    fn runs_reproduce_in_isolation() {
        let config = small(PresetName::BothDeps);
        let all = run_comparison(&config).unwrap();
        let mut alone = config.clone();
        alone.seeds = vec![4];
        alone.variants = vec![ModelVariant::Stack(Variant::Inter)];
        let single = run_comparison(&alone).unwrap();
        let pick = |rs: &[RunRecord]| {
            rs.iter()
                .find(|r| r.variant == "inter" && r.seed == 4)
                .unwrap()
                .metrics
                .clone()
        };
        assert_eq!(pick(&all), pick(&single));
    }

    #[test]
    fn sweep_at_zero_matches_comparison() {
        let mut config = small(PresetName::BothDeps);
        config.noise_grid = vec![0.0, 0.5];
        let cmp = run_comparison(&config).unwrap();
        let sweep = run_noise_sweep(&config).unwrap();
        for r in cmp.iter().filter(|r| r.variant != BAYES_VARIANT) {
            let s = sweep
                .iter()
                .find(|s| s.variant == r.variant && s.seed == r.seed)
                .unwrap();
            for (k, v) in &r.metrics {
                assert_eq!(s.metrics[&format!("{k}@sigma=0")].to_bits(), v.to_bits(), "{k}");
            }
        }
    }

    #[test]
    fn sweep_rejects_categorical_presets() {
        assert!(run_noise_sweep(&small(PresetName::DiscreteD1)).is_err());
    }

    #[test]
    fn output_is_deterministic() {
        let config = small(PresetName::DiscreteD1);
        let a = encode_csv(&run_entropy_report(&config).unwrap()).unwrap();
        let b = encode_csv(&run_entropy_report(&config).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ood_records_pair_iid_and_ood() {
        let mut config = small(PresetName::SpuriousShiftTrain);
        config.variants = vec![ModelVariant::Stack(Variant::I2m2)];
        let records = run_ood_eval(&config).unwrap();
        let r = records.iter().find(|r| r.variant == "i2m2").unwrap();
        assert!(r.metrics.contains_key("accuracy@iid"));
        assert!(r.metrics.contains_key("accuracy@ood"));
        let b = records.iter().find(|r| r.variant == BAYES_VARIANT).unwrap();
        assert!(b.metrics.contains_key("train_posterior_accuracy@ood"));
    }

    #[test]
    fn failures_stay_per_run() {
        let mut config = small(PresetName::BothDeps);
        config.train.lr_stage1 = 1e6;
        config.train.lr_stage2 = Some(1e6);
        config.seeds = vec![0];
        config.variants = vec![
            ModelVariant::Stack(Variant::I2m2),
            ModelVariant::Ensemble(vec![crate::predictors::ExpertRole::Modality1]),
        ];
        let records = run_comparison(&config).unwrap();
        // The Bayes record does not depend on training and still succeeds.
        let bayes = records.iter().find(|r| r.variant == BAYES_VARIANT).unwrap();
        assert!(bayes.error.is_none());
        assert!(records
            .iter()
            .filter(|r| r.variant != BAYES_VARIANT)
            .all(|r| r.error.is_some() && r.metrics.is_empty()));
    }
}
