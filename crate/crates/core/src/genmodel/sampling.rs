use serde::{Deserialize, Serialize};

use super::spec::{ClassConditional, GenerativeSpec, ModalityShape, Observation, SelectionModel};
use crate::error::{Error, Result};
use crate::nncore::RngStream;

/// Proposals after which the acceptance-rate guard starts checking.
pub const GUARD_MIN_PROPOSALS: u64 = 10_000;
/// Lowest tolerated running acceptance rate once the guard is active.
pub const GUARD_MIN_ACCEPTANCE: f64 = 1e-4;

/// One labeled two-modality example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Observation,
    pub x_prime: Observation,
    pub y: usize,
}

/// A seeded, shape-homogeneous collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    shapes: (ModalityShape, ModalityShape),
    spec_digest: String,
    seed: u64,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        shapes: (ModalityShape, ModalityShape),
        spec_digest: String,
        seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.y >= num_classes {
                return Err(Error::invalid(format!(
                    "sample {i}: label {} outside {num_classes} classes",
                    s.y
                )));
            }
            if !shapes.0.admits(&s.x) || !shapes.1.admits(&s.x_prime) {
                return Err(Error::dim(format!("sample {i} does not match shapes {shapes:?}")));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            shapes,
            spec_digest,
            seed,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shapes(&self) -> (ModalityShape, ModalityShape) {
        self.shapes
    }

    pub fn spec_digest(&self) -> &str {
        &self.spec_digest
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Copies the listed samples into a new dataset with the same metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(
            samples,
            self.num_classes,
            self.shapes,
            self.spec_digest.clone(),
            self.seed,
        )
    }

    pub(crate) fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            samples,
            ..self.clone_metadata()
        }
    }

    fn clone_metadata(&self) -> Self {
        Self {
            samples: Vec::new(),
            num_classes: self.num_classes,
            shapes: self.shapes,
            spec_digest: self.spec_digest.clone(),
            seed: self.seed,
        }
    }
}

/// Counters from one rejection-sampling run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl SamplerStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals as f64
    }
}

pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_logistic(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

fn bilinear_form(a: &[Vec<f64>], x: &[f64], x_prime: &[f64]) -> f64 {
    a.iter()
        .zip(x)
        .map(|(row, &xi)| xi * row.iter().zip(x_prime).map(|(w, v)| w * v).sum::<f64>())
        .sum()
}

/// Log of the selection acceptance probability.
pub fn log_selection_prob(
    spec: &GenerativeSpec,
    x: &Observation,
    x_prime: &Observation,
    y: usize,
) -> Result<f64> {
    spec.check_observations(x, x_prime)?;
    if y >= spec.num_classes {
        return Err(Error::invalid(format!("class {y} outside {} classes", spec.num_classes)));
    }
    Ok(match &spec.selection {
        SelectionModel::Constant { value } => value.ln(),
        SelectionModel::Table { accept } => {
            let (Some(a), Some(b)) = (x.as_symbol(), x_prime.as_symbol()) else {
                unreachable!("shape check guarantees symbols");
            };
            accept[y][a][b].ln()
        }
        SelectionModel::Bilinear {
            strength,
            interactions,
        } => {
            let (Some(a), Some(b)) = (x.as_vector(), x_prime.as_vector()) else {
                unreachable!("shape check guarantees vectors");
            };
            log_logistic(strength * bilinear_form(&interactions[y], a, b))
        }
    })
}

/// `p(v = 1 | x, x', y)`. The constant form ignores its inputs.
pub fn selection_prob(
    spec: &GenerativeSpec,
    x: &Observation,
    x_prime: &Observation,
    y: usize,
) -> Result<f64> {
    spec.check_observations(x, x_prime)?;
    if y >= spec.num_classes {
        return Err(Error::invalid(format!("class {y} outside {} classes", spec.num_classes)));
    }
    Ok(match &spec.selection {
        SelectionModel::Constant { value } => *value,
        SelectionModel::Table { accept } => {
            accept[y][x.as_symbol().unwrap()][x_prime.as_symbol().unwrap()]
        }
        SelectionModel::Bilinear {
            strength,
            interactions,
        } => logistic(
            strength
                * bilinear_form(
                    &interactions[y],
                    x.as_vector().unwrap(),
                    x_prime.as_vector().unwrap(),
                ),
        ),
    })
}

fn draw_modality(cond: &ClassConditional, y: usize, rng: &mut RngStream) -> Observation {
    match cond {
        ClassConditional::Categorical { table } => Observation::Symbol(rng.categorical(&table[y])),
        ClassConditional::Gaussian { means, stddev } => {
            Observation::Vector(means[y].iter().map(|m| m + stddev * rng.normal()).collect())
        }
    }
}

/// Draws `n` samples from the selection-conditioned joint by rejection.
pub fn sample_dataset(spec: &GenerativeSpec, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    sample_dataset_with_stats(spec, n, rng).map(|(d, _)| d)
}

/// Like [`sample_dataset`], also reporting proposal and acceptance counts.
///
/// Each proposal draws, in order: `y ~ prior`, `x ~ p(x|y)`, `x' ~ p(x'|y)`,
/// then a uniform compared against the selection probability.
pub fn sample_dataset_with_stats(
    spec: &GenerativeSpec,
    n: usize,
    rng: &mut RngStream,
) -> Result<(Dataset, SamplerStats)> {
    if n == 0 {
        return Err(Error::invalid("requested zero samples"));
    }
    spec.validate()?;
    let mut samples = Vec::with_capacity(n);
    let mut stats = SamplerStats {
        proposals: 0,
        accepted: 0,
    };
    while samples.len() < n {
        let y = rng.categorical(&spec.prior);
        let x = draw_modality(&spec.modality_1, y, rng);
        let x_prime = draw_modality(&spec.modality_2, y, rng);
        let accept = selection_prob(spec, &x, &x_prime, y)?;
        stats.proposals += 1;
        if rng.uniform() < accept {
            stats.accepted += 1;
            samples.push(Sample { x, x_prime, y });
        }
        if stats.proposals >= GUARD_MIN_PROPOSALS && stats.acceptance_rate() < GUARD_MIN_ACCEPTANCE
        {
            return Err(Error::Degenerate(format!(
                "acceptance rate {:.2e} after {} proposals ({} accepted)",
                stats.acceptance_rate(),
                stats.proposals,
                stats.accepted
            )));
        }
    }
    let dataset = Dataset::new(
        samples,
        spec.num_classes,
        spec.shapes(),
        spec.digest(),
        rng.seed(),
    )?;
    Ok((dataset, stats))
}
