use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genmodel::{NoiseMode, OodMode, PresetName};
use crate::predictors::{ExpertRole, TrainConfig, Variant};

/// A model the harness can train and evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelVariant {
    /// A restriction of the three-expert stack. uni/intra/inter use the
    /// stage-1 experts, i2m2 the fine-tuned stack.
    Stack(Variant),
    /// All three stage-1 experts combined without fine-tuning.
    PretrainOnly,
    /// All three experts trained jointly from initialization.
    FromScratch,
    /// Independently trained experts of the listed roles, widened to the
    /// three-expert parameter budget.
    Ensemble(Vec<ExpertRole>),
}

fn role_token(role: ExpertRole) -> &'static str {
    match role {
        ExpertRole::Modality1 => "m1",
        ExpertRole::Modality2 => "m2",
        ExpertRole::Joint => "joint",
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelVariant::Stack(v) => write!(f, "{v}"),
            ModelVariant::PretrainOnly => f.write_str("i2m2-pretrain-only"),
            ModelVariant::FromScratch => f.write_str("i2m2-from-scratch"),
            ModelVariant::Ensemble(roles) => {
                f.write_str("ensemble")?;
                for r in roles {
                    write!(f, "-{}", role_token(*r))?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i2m2-pretrain-only" => return Ok(ModelVariant::PretrainOnly),
            "i2m2-from-scratch" => return Ok(ModelVariant::FromScratch),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("ensemble-") {
            let roles = rest
                .split('-')
                .map(|t| match t {
                    "m1" => Ok(ExpertRole::Modality1),
                    "m2" => Ok(ExpertRole::Modality2),
                    "joint" => Ok(ExpertRole::Joint),
                    _ => Err(Error::invalid(format!("unknown ensemble member `{t}` in `{s}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(ModelVariant::Ensemble(roles));
        }
        s.parse::<Variant>().map(ModelVariant::Stack).map_err(|_| {
            Error::invalid(format!(
                "unknown variant `{s}` (expected uni-1, uni-2, intra, inter, i2m2, \
                 i2m2-pretrain-only, i2m2-from-scratch or ensemble-<m1|m2|joint>-...)"
            ))
        })
    }
}

/// Everything one experiment needs. Digest and file layout derive from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: PresetName,
    pub n_train: usize,
    pub n_test: usize,
    /// Monte-Carlo draws for the Bayes accuracy of continuous presets.
    pub bayes_samples: usize,
    pub train: TrainConfig,
    pub variants: Vec<ModelVariant>,
    pub seeds: Vec<u64>,
    pub noise_grid: Vec<f64>,
    pub noise_mode: NoiseMode,
    pub ood_mode: OodMode,
    pub output_dir: PathBuf,
    /// Record wall-clock seconds. Off by default so outputs stay
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: PresetName::BothDeps,
            n_train: 40_000,
            n_test: 20_000,
            bayes_samples: 100_000,
            train: TrainConfig {
                lr_stage2: Some(0.05),
                ..TrainConfig::default()
            },
            variants: Variant::ALL.into_iter().map(ModelVariant::Stack).collect(),
            seeds: (0..5).collect(),
            noise_grid: vec![0.0, 0.1, 0.25, 0.5, 1.0],
            noise_mode: NoiseMode::AdditiveGaussian,
            ood_mode: OodMode::DropSelection,
            output_dir: PathBuf::from("results"),
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("at least one variant is required"));
        }
        if self.n_train < 100 {
            return Err(Error::invalid(format!("n_train must be >= 100, got {}", self.n_train)));
        }
        if self.n_test < 100 {
            return Err(Error::invalid(format!("n_test must be >= 100, got {}", self.n_test)));
        }
        if self.bayes_samples < 1000 {
            return Err(Error::invalid(format!(
                "bayes_samples must be >= 1000, got {}",
                self.bayes_samples
            )));
        }
        if self.noise_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise levels must be finite and >= 0"));
        }
        if self
            .variants
            .iter()
            .any(|v| matches!(v, ModelVariant::Ensemble(r) if r.is_empty()))
        {
            return Err(Error::invalid("ensemble composition is empty"));
        }
        self.train.validate()?;
        self.train.split_sizes(self.n_train)?;
        Ok(())
    }

    /// Short hex digest over `kind` and every field except the output
    /// directory.
    pub fn digest(&self, kind: &str) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let mut hasher = Sha256::new();
        hasher.update(kind.as_bytes());
        hasher.update(b"\n");
        hasher.update(format!("{canonical:?}").as_bytes());
        hex::encode(&hasher.finalize()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        let names = [
            "uni-1",
            "uni-2",
            "intra",
            "inter",
            "i2m2",
            "i2m2-pretrain-only",
            "i2m2-from-scratch",
            "ensemble-m1-m1-m1",
            "ensemble-m1-m2-joint",
        ];
        for n in names {
            assert_eq!(n.parse::<ModelVariant>().unwrap().to_string(), n);
        }
        assert!("ensemble-m3".parse::<ModelVariant>().is_err());
        assert!("late-fusion".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn default_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn digest_ignores_output_dir_but_not_kind() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.digest("compare"), b.digest("compare"));
        assert_ne!(a.digest("compare"), a.digest("ood"));
        b.seeds = vec![7];
        assert_ne!(a.digest("compare"), b.digest("compare"));
        assert_eq!(a.digest("compare").len(), 16);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::default();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.n_train = 50;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.noise_grid = vec![-0.1];
        assert!(c.validate().is_err());
    }
}
