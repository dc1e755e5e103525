use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{ModalityShape, Observation, Sample};
use crate::nncore::RealMatrix;

/// Which factor of the product an expert models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertRole {
    Modality1,
    Modality2,
    Joint,
}

impl ExpertRole {
    pub const ALL: [ExpertRole; 3] = [ExpertRole::Modality1, ExpertRole::Modality2, ExpertRole::Joint];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExpertRole::Modality1 => "modality-1",
            ExpertRole::Modality2 => "modality-2",
            ExpertRole::Joint => "joint",
        }
    }
}

impl fmt::Display for ExpertRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpertRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExpertRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown expert role `{s}`")))
    }
}

/// Maps a sample to the input vector of one expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Featurizer {
    IdentityX(usize),
    IdentityXPrime(usize),
    Concat(usize, usize),
    OneHotX(usize),
    OneHotXPrime(usize),
    OneHotConcat(usize, usize),
}

impl Featurizer {
    pub fn for_role(role: ExpertRole, shapes: (ModalityShape, ModalityShape)) -> Self {
        use ModalityShape::{Symbols, Vector};
        match (role, shapes) {
            (ExpertRole::Modality1, (Vector(d), _)) => Featurizer::IdentityX(d),
            (ExpertRole::Modality1, (Symbols(n), _)) => Featurizer::OneHotX(n),
            (ExpertRole::Modality2, (_, Vector(d))) => Featurizer::IdentityXPrime(d),
            (ExpertRole::Modality2, (_, Symbols(n))) => Featurizer::OneHotXPrime(n),
            (ExpertRole::Joint, (Vector(a), Vector(b))) => Featurizer::Concat(a, b),
            (ExpertRole::Joint, (Symbols(a), Symbols(b))) => Featurizer::OneHotConcat(a, b),
            (ExpertRole::Joint, (a, b)) => Featurizer::Concat(a.size(), b.size()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Featurizer::IdentityX(d)
            | Featurizer::IdentityXPrime(d)
            | Featurizer::OneHotX(d)
            | Featurizer::OneHotXPrime(d) => d,
            Featurizer::Concat(a, b) | Featurizer::OneHotConcat(a, b) => a + b,
        }
    }

    pub fn apply(&self, sample: &Sample) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.output_dim());
        self.write(sample, &mut out)?;
        Ok(out)
    }

    fn write(&self, sample: &Sample, out: &mut Vec<f64>) -> Result<()> {
        match *self {
            Featurizer::IdentityX(d) => push_vector(&sample.x, d, out),
            Featurizer::IdentityXPrime(d) => push_vector(&sample.x_prime, d, out),
            Featurizer::Concat(a, b) => {
                push_vector(&sample.x, a, out)?;
                push_vector(&sample.x_prime, b, out)
            }
            Featurizer::OneHotX(n) => push_one_hot(&sample.x, n, out),
            Featurizer::OneHotXPrime(n) => push_one_hot(&sample.x_prime, n, out),
            Featurizer::OneHotConcat(a, b) => {
                push_one_hot(&sample.x, a, out)?;
                push_one_hot(&sample.x_prime, b, out)
            }
        }
    }

    /// Features of every sample stacked as rows.
    pub fn matrix(&self, samples: &[Sample]) -> Result<RealMatrix> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples to featurize"));
        }
        let mut values = Vec::with_capacity(samples.len() * self.output_dim());
        for s in samples {
            self.write(s, &mut values)?;
        }
        RealMatrix::new(samples.len(), self.output_dim(), values)
    }
}

fn push_vector(obs: &Observation, dim: usize, out: &mut Vec<f64>) -> Result<()> {
    match obs {
        Observation::Vector(v) if v.len() == dim => {
            out.extend_from_slice(v);
            Ok(())
        }
        other => Err(Error::dim(format!("expected a {dim}-vector, got {other:?}"))),
    }
}

fn push_one_hot(obs: &Observation, support: usize, out: &mut Vec<f64>) -> Result<()> {
    match obs {
        Observation::Symbol(s) if *s < support => {
            out.extend((0..support).map(|i| if i == *s { 1.0 } else { 0.0 }));
            Ok(())
        }
        other => Err(Error::dim(format!(
            "expected a symbol below {support}, got {other:?}"
        ))),
    }
}

impl fmt::Display for Featurizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Featurizer::IdentityX(d) => write!(f, "identity-x:{d}"),
            Featurizer::IdentityXPrime(d) => write!(f, "identity-x':{d}"),
            Featurizer::Concat(a, b) => write!(f, "concat:{a}:{b}"),
            Featurizer::OneHotX(n) => write!(f, "one-hot-x:{n}"),
            Featurizer::OneHotXPrime(n) => write!(f, "one-hot-x':{n}"),
            Featurizer::OneHotConcat(a, b) => write!(f, "one-hot-concat:{a}:{b}"),
        }
    }
}

impl FromStr for Featurizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown featurizer `{s}`"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let dims: Vec<usize> = parts
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, dims.as_slice()) {
            ("identity-x", [d]) => Ok(Featurizer::IdentityX(*d)),
            ("identity-x'", [d]) => Ok(Featurizer::IdentityXPrime(*d)),
            ("concat", [a, b]) => Ok(Featurizer::Concat(*a, *b)),
            ("one-hot-x", [n]) => Ok(Featurizer::OneHotX(*n)),
            ("one-hot-x'", [n]) => Ok(Featurizer::OneHotXPrime(*n)),
            ("one-hot-concat", [a, b]) => Ok(Featurizer::OneHotConcat(*a, *b)),
            _ => Err(bad()),
        }
    }
}

/// Input vector of the expert playing `role` for data of the given shapes.
pub fn featurize(
    sample: &Sample,
    role: ExpertRole,
    shapes: (ModalityShape, ModalityShape),
) -> Result<Vec<f64>> {
    Featurizer::for_role(role, shapes).apply(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(x: Vec<f64>, xp: Vec<f64>) -> Sample {
        Sample {
            x: Observation::Vector(x),
            x_prime: Observation::Vector(xp),
            y: 0,
        }
    }

    #[test]
    fn gaussian_roles() {
        let s = gaussian(vec![1.0, 2.0, 3.0], vec![4.0, 5.0]);
        let shapes = (ModalityShape::Vector(3), ModalityShape::Vector(2));
        assert_eq!(featurize(&s, ExpertRole::Modality1, shapes).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(featurize(&s, ExpertRole::Modality2, shapes).unwrap(), vec![4.0, 5.0]);
        let joint = featurize(&s, ExpertRole::Joint, shapes).unwrap();
        assert_eq!(joint.len(), 5);
        assert_eq!(joint, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn one_hot_roles() {
        let s = Sample {
            x: Observation::Symbol(1),
            x_prime: Observation::Symbol(0),
            y: 1,
        };
        let shapes = (ModalityShape::Symbols(2), ModalityShape::Symbols(3));
        assert_eq!(featurize(&s, ExpertRole::Modality1, shapes).unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            featurize(&s, ExpertRole::Joint, shapes).unwrap(),
            vec![0.0, 1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn shape_mismatch_errors() {
        let s = gaussian(vec![1.0], vec![2.0]);
        let shapes = (ModalityShape::Vector(2), ModalityShape::Vector(1));
        assert!(featurize(&s, ExpertRole::Modality1, shapes).is_err());
        let sym = (ModalityShape::Symbols(2), ModalityShape::Symbols(2));
        assert!(featurize(&s, ExpertRole::Joint, sym).is_err());
    }

    #[test]
    fn names_round_trip() {
        for f in [
            Featurizer::IdentityX(3),
            Featurizer::IdentityXPrime(4),
            Featurizer::Concat(3, 4),
            Featurizer::OneHotX(2),
            Featurizer::OneHotXPrime(5),
            Featurizer::OneHotConcat(2, 5),
        ] {
            assert_eq!(f.to_string().parse::<Featurizer>().unwrap(), f);
        }
        for r in ExpertRole::ALL {
            assert_eq!(r.to_string().parse::<ExpertRole>().unwrap(), r);
        }
        assert!("concat:1".parse::<Featurizer>().is_err());
    }
}
