use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;

/// Class-conditional distribution of one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassConditional {
    /// `table[y][s]` = probability of symbol `s` given class `y`.
    Categorical { table: Vec<Vec<f64>> },
    /// Isotropic gaussian around `means[y]`, shared standard deviation.
    Gaussian { means: Vec<Vec<f64>>, stddev: f64 },
}

impl ClassConditional {
    pub fn num_classes(&self) -> usize {
        match self {
            ClassConditional::Categorical { table } => table.len(),
            ClassConditional::Gaussian { means, .. } => means.len(),
        }
    }

    pub fn shape(&self) -> ModalityShape {
        match self {
            ClassConditional::Categorical { table } => {
                ModalityShape::Symbols(table.first().map_or(0, Vec::len))
            }
            ClassConditional::Gaussian { means, .. } => {
                ModalityShape::Vector(means.first().map_or(0, Vec::len))
            }
        }
    }

    fn validate(&self, which: &str) -> Result<()> {
        match self {
            ClassConditional::Categorical { table } => {
                let support = table.first().map_or(0, Vec::len);
                if support == 0 {
                    return Err(Error::invalid(format!("{which}: empty symbol support")));
                }
                for (y, row) in table.iter().enumerate() {
                    if row.len() != support {
                        return Err(Error::dim(format!(
                            "{which}: class {y} has {} symbols, expected {support}",
                            row.len()
                        )));
                    }
                    if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                        return Err(Error::invalid(format!(
                            "{which}: class {y} has a negative or non-finite probability"
                        )));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > SUM_TOLERANCE {
                        return Err(Error::invalid(format!(
                            "{which}: class {y} probabilities sum to {total}"
                        )));
                    }
                }
            }
            ClassConditional::Gaussian { means, stddev } => {
                if !(*stddev > 0.0 && stddev.is_finite()) {
                    return Err(Error::invalid(format!(
                        "{which}: stddev must be positive, got {stddev}"
                    )));
                }
                let dim = means.first().map_or(0, Vec::len);
                if dim == 0 {
                    return Err(Error::invalid(format!("{which}: zero-dimensional features")));
                }
                for (y, mean) in means.iter().enumerate() {
                    if mean.len() != dim {
                        return Err(Error::dim(format!(
                            "{which}: class {y} mean has dimension {}, expected {dim}",
                            mean.len()
                        )));
                    }
                    if mean.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("{which}: class {y} mean")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Log density (gaussian) or log mass (categorical) of `obs` under class `y`.
    pub fn log_density(&self, obs: &Observation, y: usize) -> Result<f64> {
        match (self, obs) {
            (ClassConditional::Categorical { table }, Observation::Symbol(s)) => {
                let row = &table[y];
                if *s >= row.len() {
                    return Err(Error::dim(format!(
                        "symbol {s} outside support of size {}",
                        row.len()
                    )));
                }
                Ok(row[*s].ln())
            }
            (ClassConditional::Gaussian { means, stddev }, Observation::Vector(x)) => {
                let mean = &means[y];
                if x.len() != mean.len() {
                    return Err(Error::dim(format!(
                        "feature vector has dimension {}, expected {}",
                        x.len(),
                        mean.len()
                    )));
                }
                let sq: f64 = x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
                let var = stddev * stddev;
                let norm = 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln();
                Ok(-sq / (2.0 * var) - norm)
            }
            _ => Err(Error::dim("observation kind does not match the conditional")),
        }
    }
}

/// Form of the selection mechanism `p(v = 1 | x, x', y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum SelectionModel {
    /// Accepts every triple with the same probability.
    Constant { value: f64 },
    /// `accept[y][x][x']` for categorical modalities.
    Table { accept: Vec<Vec<Vec<f64>>> },
    /// `logistic(strength · xᵀ A_y x')` with `interactions[y] = A_y` (d × d').
    Bilinear {
        strength: f64,
        interactions: Vec<Vec<Vec<f64>>>,
    },
}

impl SelectionModel {
    /// True when the acceptance probability cannot depend on the class.
    pub fn is_class_independent(&self) -> bool {
        match self {
            SelectionModel::Constant { .. } => true,
            SelectionModel::Table { accept } => accept.windows(2).all(|w| w[0] == w[1]),
            SelectionModel::Bilinear {
                strength,
                interactions,
            } => *strength == 0.0 || interactions.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

/// Shape of one modality's observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityShape {
    /// A single symbol from a support of the given size.
    Symbols(usize),
    /// A real vector of the given dimension.
    Vector(usize),
}

impl ModalityShape {
    /// Symbol support size or vector dimension.
    pub fn size(&self) -> usize {
        match *self {
            ModalityShape::Symbols(n) | ModalityShape::Vector(n) => n,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, ModalityShape::Symbols(_))
    }

    pub fn admits(&self, obs: &Observation) -> bool {
        match (self, obs) {
            (ModalityShape::Symbols(n), Observation::Symbol(s)) => s < n,
            (ModalityShape::Vector(d), Observation::Vector(v)) => v.len() == *d,
            _ => false,
        }
    }
}

/// One modality's value for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Symbol(usize),
    Vector(Vec<f64>),
}

impl Observation {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Observation::Vector(v) => Some(v),
            Observation::Symbol(_) => None,
        }
    }

    pub fn as_symbol(&self) -> Option<usize> {
        match self {
            Observation::Symbol(s) => Some(*s),
            Observation::Vector(_) => None,
        }
    }
}

/// Full parameterization of `p(y) p(x|y) p(x'|y) p(v=1|x,x',y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub num_classes: usize,
    pub prior: Vec<f64>,
    pub modality_1: ClassConditional,
    pub modality_2: ClassConditional,
    pub selection: SelectionModel,
}

impl GenerativeSpec {
    pub fn new(
        prior: Vec<f64>,
        modality_1: ClassConditional,
        modality_2: ClassConditional,
        selection: SelectionModel,
    ) -> Result<Self> {
        let spec = Self {
            num_classes: prior.len(),
            prior,
            modality_1,
            modality_2,
            selection,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {c}")));
        }
        if self.prior.len() != c {
            return Err(Error::dim(format!("prior has {} entries for {c} classes", self.prior.len())));
        }
        if self.prior.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("prior has a negative or non-finite entry"));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("prior sums to {total}")));
        }
        self.modality_1.validate("modality 1")?;
        self.modality_2.validate("modality 2")?;
        for (which, m) in [("modality 1", &self.modality_1), ("modality 2", &self.modality_2)] {
            if m.num_classes() != c {
                return Err(Error::dim(format!(
                    "{which} defines {} classes, prior defines {c}",
                    m.num_classes()
                )));
            }
        }
        let (s1, s2) = (self.modality_1.shape(), self.modality_2.shape());
        if s1.is_categorical() != s2.is_categorical() {
            return Err(Error::invalid("both modalities must be categorical or both gaussian"));
        }
        match &self.selection {
            SelectionModel::Constant { value } => {
                if !(*value > 0.0 && *value <= 1.0) {
                    return Err(Error::invalid(format!(
                        "constant selection must lie in (0, 1], got {value}"
                    )));
                }
            }
            SelectionModel::Table { accept } => {
                let (ModalityShape::Symbols(n1), ModalityShape::Symbols(n2)) = (s1, s2) else {
                    return Err(Error::invalid("table selection requires categorical modalities"));
                };
                if accept.len() != c
                    || accept
                        .iter()
                        .any(|t| t.len() != n1 || t.iter().any(|r| r.len() != n2))
                {
                    return Err(Error::dim(format!(
                        "selection table must be {c} x {n1} x {n2}"
                    )));
                }
                if accept.iter().flatten().flatten().any(|&p| !(p > 0.0 && p <= 1.0)) {
                    return Err(Error::invalid("selection table entries must lie in (0, 1]"));
                }
            }
            SelectionModel::Bilinear {
                strength,
                interactions,
            } => {
                let (ModalityShape::Vector(d1), ModalityShape::Vector(d2)) = (s1, s2) else {
                    return Err(Error::invalid("bilinear selection requires gaussian modalities"));
                };
                if !(*strength >= 0.0 && strength.is_finite()) {
                    return Err(Error::invalid(format!(
                        "selection strength must be >= 0, got {strength}"
                    )));
                }
                if interactions.len() != c
                    || interactions
                        .iter()
                        .any(|a| a.len() != d1 || a.iter().any(|r| r.len() != d2))
                {
                    return Err(Error::dim(format!(
                        "interaction matrices must be {c} x {d1} x {d2}"
                    )));
                }
                if interactions.iter().flatten().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("interaction matrix".into()));
                }
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> (ModalityShape, ModalityShape) {
        (self.modality_1.shape(), self.modality_2.shape())
    }

    pub fn is_categorical(&self) -> bool {
        self.modality_1.shape().is_categorical()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub(crate) fn check_observations(&self, x: &Observation, x_prime: &Observation) -> Result<()> {
        let (s1, s2) = self.shapes();
        if !s1.admits(x) {
            return Err(Error::dim(format!("x does not fit modality shape {s1:?}")));
        }
        if !s2.admits(x_prime) {
            return Err(Error::dim(format!("x' does not fit modality shape {s2:?}")));
        }
        Ok(())
    }
}
