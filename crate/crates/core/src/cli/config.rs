//! Flat `key = value` configuration with `[section]` headers.
//!
//! Sections are `generator`, `train`, `experiment` and `output`. Blank lines
//! and lines starting with `#` are ignored. Lists are comma separated;
//! `none` is the empty list.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::genmodel::{NoiseMode, OodMode, PresetName};
use crate::harness::{ExperimentConfig, ModelVariant};
use crate::predictors::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Syntax,
    UnknownKey,
    TypeMismatch,
    Constraint,
}

/// Where a setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    /// The n-th `--set` override, counting from 1.
    Override(usize),
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override(n) => write!(f, "--set #{n}"),
            Origin::Default => f.write_str("defaults"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{origin}: key `{key}`: {message}")]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub origin: Origin,
    pub key: String,
    pub message: String,
}

pub const SECTIONS: [&str; 4] = ["generator", "train", "experiment", "output"];

/// Every key with its section, in dump order.
pub const KEYS: [(&str, &str); 25] = [
    ("generator", "preset"),
    ("generator", "n_train"),
    ("generator", "n_test"),
    ("generator", "bayes_samples"),
    ("train", "lr_stage1"),
    ("train", "lr_stage2"),
    ("train", "weight_decay"),
    ("train", "epochs_stage1"),
    ("train", "epochs_stage2"),
    ("train", "batch_size"),
    ("train", "validation_fraction"),
    ("train", "patience"),
    ("train", "seed"),
    ("train", "hidden_unimodal"),
    ("train", "hidden_joint"),
    ("train", "prior_coefficient"),
    ("train", "schedule"),
    ("train", "monotone_coverage"),
    ("experiment", "variants"),
    ("experiment", "seeds"),
    ("experiment", "noise_grid"),
    ("experiment", "noise_mode"),
    ("experiment", "ood_mode"),
    ("output", "dir"),
    ("output", "timing"),
];

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|&(s, k)| s == section && k == key)
}

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .find(|&&(_, k)| k == key)
        .map(|&(s, _)| s)
}

fn list(values: &[impl fmt::Display]) -> String {
    if values.is_empty() {
        "none".to_string()
    } else {
        values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn value_of(config: &ExperimentConfig, key: &str) -> String {
    let t = &config.train;
    match key {
        "preset" => config.preset.to_string(),
        "n_train" => config.n_train.to_string(),
        "n_test" => config.n_test.to_string(),
        "bayes_samples" => config.bayes_samples.to_string(),
        "lr_stage1" => t.lr_stage1.to_string(),
        "lr_stage2" => t.lr_stage2.map_or("auto".to_string(), |v| v.to_string()),
        "weight_decay" => t.weight_decay.to_string(),
        "epochs_stage1" => t.epochs_stage1.to_string(),
        "epochs_stage2" => t.epochs_stage2.to_string(),
        "batch_size" => t.batch_size.to_string(),
        "validation_fraction" => t.validation_fraction.to_string(),
        "patience" => t.patience.to_string(),
        "seed" => t.seed.to_string(),
        "hidden_unimodal" => list(&t.hidden_unimodal),
        "hidden_joint" => list(&t.hidden_joint),
        "prior_coefficient" => t.prior_coefficient.to_string(),
        "schedule" => t.schedule.to_string(),
        "monotone_coverage" => t.monotone_coverage.to_string(),
        "variants" => list(&config.variants),
        "seeds" => list(&config.seeds),
        "noise_grid" => list(&config.noise_grid),
        "noise_mode" => config.noise_mode.to_string(),
        "ood_mode" => config.ood_mode.to_string(),
        "dir" => config.output_dir.display().to_string(),
        "timing" => config.timing.to_string(),
        _ => unreachable!("unknown key {key}"),
    }
}

/// The config in file syntax; parses back to an equal config.
pub fn render_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    for section in SECTIONS {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("[{section}]\n"));
        for &(_, key) in KEYS.iter().filter(|&&(s, _)| s == section) {
            out.push_str(&format!("{key} = {}\n", value_of(config, key)));
        }
    }
    out
}

/// Parses one setting into `config`.
struct Setter<'a> {
    origin: Origin,
    key: &'a str,
    value: &'a str,
}

impl Setter<'_> {
    fn error(&self, kind: ConfigErrorKind, message: impl Into<String>) -> ConfigError {
        ConfigError {
            kind,
            origin: self.origin,
            key: self.key.to_string(),
            message: message.into(),
        }
    }

    fn mismatch(&self, expected: &str) -> ConfigError {
        self.error(
            ConfigErrorKind::TypeMismatch,
            format!("expected {expected}, got `{}`", self.value),
        )
    }

    fn constraint(&self, message: impl Into<String>) -> ConfigError {
        self.error(ConfigErrorKind::Constraint, message)
    }

    fn count(&self) -> Result<usize, ConfigError> {
        self.value.parse().map_err(|_| {
            if self.value.parse::<i64>().is_ok() {
                self.constraint(format!("must be non-negative, got {}", self.value))
            } else {
                self.mismatch("a non-negative integer")
            }
        })
    }

    fn count_at_least(&self, min: usize) -> Result<usize, ConfigError> {
        let v = self.count()?;
        if v < min {
            return Err(self.constraint(format!("must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    fn real(&self) -> Result<f64, ConfigError> {
        self.value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.mismatch("a finite number"))
    }

    fn positive(&self) -> Result<f64, ConfigError> {
        let v = self.real()?;
        if v <= 0.0 {
            return Err(self.constraint(format!("must be > 0, got {v}")));
        }
        Ok(v)
    }

    fn non_negative(&self) -> Result<f64, ConfigError> {
        let v = self.real()?;
        if v < 0.0 {
            return Err(self.constraint(format!("must be >= 0, got {v}")));
        }
        Ok(v)
    }

    fn boolean(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.mismatch("true or false")),
        }
    }

    fn items(&self) -> Vec<&str> {
        if self.value == "none" || self.value.is_empty() {
            Vec::new()
        } else {
            self.value.split(',').map(str::trim).collect()
        }
    }

    fn parsed<T: std::str::FromStr>(&self, what: &str) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| self.mismatch(what))
    }

    fn apply(&self, config: &mut ExperimentConfig) -> Result<(), ConfigError> {
        let t = &mut config.train;
        match self.key {
            "preset" => {
                config.preset = self.value.parse::<PresetName>().map_err(|_| {
                    let names: Vec<&str> = PresetName::ALL.iter().map(|p| p.as_str()).collect();
                    self.mismatch(&format!("one of {}", names.join(", ")))
                })?
            }
            "n_train" => config.n_train = self.count_at_least(100)?,
            "n_test" => config.n_test = self.count_at_least(100)?,
            "bayes_samples" => config.bayes_samples = self.count_at_least(1000)?,
            "lr_stage1" => t.lr_stage1 = self.positive()?,
            "lr_stage2" => {
                t.lr_stage2 = if self.value == "auto" {
                    None
                } else {
                    Some(self.positive()?)
                }
            }
            "weight_decay" => t.weight_decay = self.non_negative()?,
            "epochs_stage1" => t.epochs_stage1 = self.count()?,
            "epochs_stage2" => t.epochs_stage2 = self.count()?,
            "batch_size" => t.batch_size = self.count_at_least(1)?,
            "validation_fraction" => {
                let v = self.real()?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(self.constraint(format!("must lie in (0, 1), got {v}")));
                }
                t.validation_fraction = v;
            }
            "patience" => t.patience = self.count_at_least(1)?,
            "seed" => t.seed = self.parsed("an unsigned 64-bit integer")?,
            "hidden_unimodal" | "hidden_joint" => {
                let widths = self
                    .items()
                    .into_iter()
                    .map(|w| w.parse::<usize>().map_err(|_| self.mismatch("a list of layer widths or `none`")))
                    .collect::<Result<Vec<_>, _>>()?;
                if widths.contains(&0) {
                    return Err(self.constraint("layer widths must be positive"));
                }
                if self.key == "hidden_joint" {
                    t.hidden_joint = widths;
                } else {
                    t.hidden_unimodal = widths;
                }
            }
            "prior_coefficient" => t.prior_coefficient = self.real()?,
            "schedule" => {
                t.schedule = self
                    .parsed::<Schedule>("two-stage, pretrain-only or joint-from-scratch")?
            }
            "monotone_coverage" => t.monotone_coverage = self.boolean()?,
            "variants" => {
                let variants = self
                    .items()
                    .into_iter()
                    .map(|v| v.parse::<ModelVariant>().map_err(|e| self.error(ConfigErrorKind::TypeMismatch, e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                if variants.is_empty() {
                    return Err(self.constraint("at least one variant is required"));
                }
                config.variants = variants;
            }
            "seeds" => {
                let seeds = self
                    .items()
                    .into_iter()
                    .map(|s| s.parse::<u64>().map_err(|_| self.mismatch("a list of unsigned 64-bit integers")))
                    .collect::<Result<Vec<_>, _>>()?;
                if seeds.is_empty() {
                    return Err(self.constraint("at least one seed is required"));
                }
                config.seeds = seeds;
            }
            "noise_grid" => {
                let grid = self
                    .items()
                    .into_iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| self.mismatch("a list of noise levels"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if grid.iter().any(|&s| s < 0.0) {
                    return Err(self.constraint("noise levels must be >= 0"));
                }
                config.noise_grid = grid;
            }
            "noise_mode" => config.noise_mode = self.parsed::<NoiseMode>("additive-gaussian or rician-magnitude")?,
            "ood_mode" => {
                config.ood_mode = self.value.parse::<OodMode>().map_err(|e| {
                    self.error(ConfigErrorKind::TypeMismatch, e.to_string())
                })?
            }
            "dir" => {
                if self.value.is_empty() {
                    return Err(self.constraint("output directory must not be empty"));
                }
                config.output_dir = PathBuf::from(self.value)
            }
            "timing" => config.timing = self.boolean()?,
            _ => unreachable!("key checked before apply"),
        }
        Ok(())
    }
}

/// Applies settings in order, then checks the constraints that span keys.
#[derive(Default)]
struct Builder {
    config: ExperimentConfig,
    split_origin: Option<Origin>,
}

impl Builder {
    fn set(&mut self, origin: Origin, key: &str, value: &str) -> Result<(), ConfigError> {
        Setter { origin, key, value }.apply(&mut self.config)?;
        if matches!(key, "n_train" | "batch_size" | "validation_fraction") {
            self.split_origin = Some(origin);
        }
        Ok(())
    }

    fn finish(self) -> Result<ExperimentConfig, ConfigError> {
        if let Err(e) = self.config.train.split_sizes(self.config.n_train) {
            return Err(ConfigError {
                kind: ConfigErrorKind::Constraint,
                origin: self.split_origin.unwrap_or(Origin::Default),
                key: "n_train".to_string(),
                message: e.to_string(),
            });
        }
        debug_assert!(self.config.validate().is_ok());
        Ok(self.config)
    }
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn parse_into(builder: &mut Builder, text: &str) -> Result<(), ConfigError> {
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let origin = Origin::Line(i + 1);
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            section = Some(SECTIONS.iter().copied().find(|&s| s == name).ok_or_else(|| ConfigError {
                kind: ConfigErrorKind::UnknownKey,
                origin,
                key: format!("[{name}]"),
                message: format!("unknown section (expected one of {})", SECTIONS.join(", ")),
            })?);
            continue;
        }
        let Some((key, value)) = split_assignment(line) else {
            return Err(ConfigError {
                kind: ConfigErrorKind::Syntax,
                origin,
                key: line.to_string(),
                message: "expected `key = value` or `[section]`".to_string(),
            });
        };
        let Some(current) = section else {
            return Err(ConfigError {
                kind: ConfigErrorKind::Syntax,
                origin,
                key: key.to_string(),
                message: "setting before any [section] header".to_string(),
            });
        };
        if !known(current, key) {
            let hint = section_of(key).map_or(String::new(), |s| format!(" (it belongs in [{s}])"));
            return Err(ConfigError {
                kind: ConfigErrorKind::UnknownKey,
                origin,
                key: key.to_string(),
                message: format!("unknown key in [{current}]{hint}"),
            });
        }
        builder.set(origin, key, value)?;
    }
    Ok(())
}

/// Parses a config file. An empty text gives the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Parses `text`, then applies `key=value` overrides in order. Override
/// keys are bare (`n_train`) or section-qualified (`generator.n_train`).
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut builder = Builder::default();
    parse_into(&mut builder, text)?;
    for (i, item) in overrides.iter().enumerate() {
        let origin = Origin::Override(i + 1);
        let Some((key, value)) = split_assignment(item) else {
            return Err(ConfigError {
                kind: ConfigErrorKind::Syntax,
                origin,
                key: item.clone(),
                message: "expected key=value".to_string(),
            });
        };
        let bare = match key.split_once('.') {
            Some((s, k)) if known(s, k) => k,
            Some(_) => "",
            None if section_of(key).is_some() => key,
            None => "",
        };
        if bare.is_empty() {
            return Err(ConfigError {
                kind: ConfigErrorKind::UnknownKey,
                origin,
                key: key.to_string(),
                message: "unknown key".to_string(),
            });
        }
        builder.set(origin, bare, value)?;
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::Variant;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
        assert_eq!(parse_config("# nothing\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn defaults_dump_round_trips() {
        let text = render_config(&ExperimentConfig::default());
        assert_eq!(parse_config(&text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn non_default_dump_round_trips() {
        let text = "[generator]\npreset = discrete-d1\n[train]\nlr_stage2 = auto\nhidden_unimodal = 4,3\n\
                    hidden_joint = none\nmonotone_coverage = true\n[experiment]\n\
                    variants = i2m2,ensemble-m1-m1-m1\nood_mode = shift-means:0.5\nnoise_grid = 0,0.1\n\
                    [output]\ndir = out dir\ntiming = true\n";
        let config = parse_config(text).unwrap();
        assert_eq!(config.train.lr_stage2, None);
        assert_eq!(config.train.hidden_unimodal, vec![4, 3]);
        assert!(config.train.hidden_joint.is_empty());
        assert_eq!(config.output_dir, PathBuf::from("out dir"));
        assert_eq!(parse_config(&render_config(&config)).unwrap(), config);
    }

    #[test]
    fn seeds_list() {
        let c = parse_config("[experiment]\nseeds = 1,2,3\n").unwrap();
        assert_eq!(c.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn negative_n_train_is_a_constraint_error() {
        let e = parse_config("[generator]\n\nn_train = -5\n").unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::Constraint);
        assert_eq!(e.key, "n_train");
        assert_eq!(e.origin, Origin::Line(3));
        assert!(e.to_string().contains("line 3"));
        assert!(e.to_string().contains("n_train"));
    }

    #[test]
    fn error_kinds_are_distinct() {
        let unknown = parse_config("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(unknown.kind, ConfigErrorKind::UnknownKey);
        assert_eq!(unknown.origin, Origin::Line(2));
        let mismatch = parse_config("[train]\nlr_stage1 = fast\n").unwrap_err();
        assert_eq!(mismatch.kind, ConfigErrorKind::TypeMismatch);
        let misplaced = parse_config("[train]\nn_train = 500\n").unwrap_err();
        assert!(misplaced.message.contains("[generator]"));
        let syntax = parse_config("[train]\nlr_stage1 0.1\n").unwrap_err();
        assert_eq!(syntax.kind, ConfigErrorKind::Syntax);
        let section = parse_config("[model]\n").unwrap_err();
        assert_eq!(section.kind, ConfigErrorKind::UnknownKey);
        let orphan = parse_config("n_train = 500\n").unwrap_err();
        assert_eq!(orphan.kind, ConfigErrorKind::Syntax);
    }

    #[test]
    fn cross_key_split_check_names_a_line() {
        let e = parse_config("[generator]\nn_train = 100\n[train]\nbatch_size = 90\n").unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::Constraint);
        assert_eq!(e.origin, Origin::Line(4));
    }

    #[test]
    fn overrides_apply_after_file() {
        let c = parse_with_overrides(
            "[generator]\nn_train = 500\n",
            &["n_train=700".into(), "experiment.variants=inter".into()],
        )
        .unwrap();
        assert_eq!(c.n_train, 700);
        assert_eq!(c.variants, vec![ModelVariant::Stack(Variant::Inter)]);
        let e = parse_with_overrides("", &["train.n_train=700".into()]).unwrap_err();
        assert_eq!(e.origin, Origin::Override(1));
        assert_eq!(e.kind, ConfigErrorKind::UnknownKey);
        let e = parse_with_overrides("", &["n_test=x".into()]).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::TypeMismatch);
    }
}
