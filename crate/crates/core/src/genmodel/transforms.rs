use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sampling::{Dataset, Sample};
use super::spec::{ClassConditional, GenerativeSpec, Observation, SelectionModel};
use crate::error::{Error, Result};
use crate::nncore::RngStream;

/// Spec surgery used to build out-of-distribution test conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    /// Bilinear strength to zero; a selection table becomes its mean constant.
    DropSelection,
    /// `A_y → −A_y` for every class.
    FlipInteraction,
    /// Adds the offset to every coordinate of every class mean.
    ShiftMeans(f64),
}

impl fmt::Display for OodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OodMode::DropSelection => write!(f, "drop-selection"),
            OodMode::FlipInteraction => write!(f, "flip-interaction"),
            OodMode::ShiftMeans(offset) => write!(f, "shift-means:{offset}"),
        }
    }
}

impl FromStr for OodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop-selection" => Ok(OodMode::DropSelection),
            "flip-interaction" => Ok(OodMode::FlipInteraction),
            _ => match s.strip_prefix("shift-means:") {
                Some(v) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(OodMode::ShiftMeans)
                    .ok_or_else(|| Error::invalid(format!("bad shift offset in `{s}`"))),
                None => Err(Error::invalid(format!(
                    "unknown OOD mode `{s}` (expected drop-selection, flip-interaction or shift-means:<offset>)"
                ))),
            },
        }
    }
}

/// Returns a modified copy of `spec`; the original is untouched.
pub fn make_ood_spec(spec: &GenerativeSpec, mode: OodMode) -> Result<GenerativeSpec> {
    let mut out = spec.clone();
    match mode {
        OodMode::DropSelection => {
            out.selection = match &spec.selection {
                SelectionModel::Constant { value } => SelectionModel::Constant { value: *value },
                SelectionModel::Table { accept } => {
                    let entries: Vec<f64> = accept.iter().flatten().flatten().copied().collect();
                    let mean = entries.iter().sum::<f64>() / entries.len() as f64;
                    SelectionModel::Constant { value: mean }
                }
                SelectionModel::Bilinear { interactions, .. } => SelectionModel::Bilinear {
                    strength: 0.0,
                    interactions: interactions.clone(),
                },
            };
        }
        OodMode::FlipInteraction => match &mut out.selection {
            SelectionModel::Bilinear { interactions, .. } => {
                for v in interactions.iter_mut().flatten().flatten() {
                    *v = -*v;
                }
            }
            _ => {
                return Err(Error::Unsupported(
                    "flip-interaction needs a bilinear selection model".into(),
                ))
            }
        },
        OodMode::ShiftMeans(offset) => {
            for cond in [&mut out.modality_1, &mut out.modality_2] {
                match cond {
                    ClassConditional::Gaussian { means, .. } => {
                        for v in means.iter_mut().flatten() {
                            *v += offset;
                        }
                    }
                    ClassConditional::Categorical { .. } => {
                        return Err(Error::Unsupported(
                            "shift-means needs gaussian modalities".into(),
                        ))
                    }
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Replaces each modality's class means by their average over classes,
/// removing every direct label-to-modality dependency.
pub fn collapse_means(spec: &GenerativeSpec) -> Result<GenerativeSpec> {
    let mut out = spec.clone();
    for cond in [&mut out.modality_1, &mut out.modality_2] {
        match cond {
            ClassConditional::Gaussian { means, .. } => {
                let dim = means[0].len();
                let k = means.len() as f64;
                let centre: Vec<f64> = (0..dim)
                    .map(|i| means.iter().map(|m| m[i]).sum::<f64>() / k)
                    .collect();
                for m in means.iter_mut() {
                    m.clone_from(&centre);
                }
            }
            ClassConditional::Categorical { table } => {
                let support = table[0].len();
                let k = table.len() as f64;
                let centre: Vec<f64> = (0..support)
                    .map(|s| table.iter().map(|r| r[s]).sum::<f64>() / k)
                    .collect();
                for r in table.iter_mut() {
                    r.clone_from(&centre);
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Adds independent `N(0, σ²)` to every feature.
    AdditiveGaussian,
    /// Treats features `(2k, 2k+1)` as (real, imaginary) channels, perturbs
    /// both with `N(0, σ²)` and stores `(magnitude, 0)`.
    RicianMagnitude,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::AdditiveGaussian => "additive-gaussian",
            NoiseMode::RicianMagnitude => "rician-magnitude",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive-gaussian" => Ok(NoiseMode::AdditiveGaussian),
            "rician-magnitude" => Ok(NoiseMode::RicianMagnitude),
            _ => Err(Error::invalid(format!(
                "unknown noise mode `{s}` (expected additive-gaussian or rician-magnitude)"
            ))),
        }
    }
}

fn degrade(values: &[f64], mode: NoiseMode, sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    match mode {
        NoiseMode::AdditiveGaussian => {
            if sigma == 0.0 {
                return values.to_vec();
            }
            values.iter().map(|v| v + sigma * rng.normal()).collect()
        }
        NoiseMode::RicianMagnitude => values
            .chunks_exact(2)
            .flat_map(|pair| {
                let re = pair[0] + sigma * rng.normal();
                let im = pair[1] + sigma * rng.normal();
                [re.hypot(im), 0.0]
            })
            .collect(),
    }
}

/// Corrupts both modalities of a gaussian-feature dataset.
pub fn apply_noise(
    dataset: &Dataset,
    mode: NoiseMode,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let (s1, s2) = dataset.shapes();
    if s1.is_categorical() || s2.is_categorical() {
        return Err(Error::Unsupported("noise needs gaussian-feature datasets".into()));
    }
    if mode == NoiseMode::RicianMagnitude && (s1.size() % 2 == 1 || s2.size() % 2 == 1) {
        return Err(Error::dim(format!(
            "rician mode pairs features; dimensions {} and {} must be even",
            s1.size(),
            s2.size()
        )));
    }
    let samples = dataset
        .samples()
        .iter()
        .map(|s| {
            let x = degrade(s.x.as_vector().unwrap(), mode, sigma, rng);
            let xp = degrade(s.x_prime.as_vector().unwrap(), mode, sigma, rng);
            Sample {
                x: Observation::Vector(x),
                x_prime: Observation::Vector(xp),
                y: s.y,
            }
        })
        .collect();
    Ok(dataset.with_samples(samples))
}
