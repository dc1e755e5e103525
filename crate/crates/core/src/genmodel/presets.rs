//! Preset catalogue.
//!
//! Gaussian presets split each modality's features into a *signal* block,
//! whose class means differ (direct label-to-modality edges), and an
//! *interaction* block of zero-mean features that the label reaches only
//! through the bilinear selection `logistic(β · xᵀ A_y x')`. With two classes
//! and `A_1 = −A_0`, every interaction feature is marginally `N(0, σ²)` under
//! both classes after selection, so the interaction block is invisible to a
//! single modality.

use std::fmt;
use std::str::FromStr;

use super::spec::{ClassConditional, GenerativeSpec, SelectionModel};
use super::transforms::{make_ood_spec, OodMode};
use crate::error::{Error, Result};

/// Shape and strength parameters of a gaussian preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDesign {
    pub signal_dims: usize,
    pub interaction_dims: usize,
    /// Per-coordinate class-mean offset (±) in modality 1's signal block.
    pub separation_1: f64,
    /// Per-coordinate class-mean offset (±) in modality 2's signal block.
    pub separation_2: f64,
    pub stddev: f64,
    /// Bilinear selection strength β; `None` means constant selection.
    pub strength: Option<f64>,
}

/// Constant acceptance used by presets without a selection effect.
pub const CONSTANT_ACCEPTANCE: f64 = 0.5;

/// Both dependency types present.
pub const BOTH_DEPS: GaussianDesign = GaussianDesign {
    signal_dims: 8,
    interaction_dims: 2,
    separation_1: 0.25,
    separation_2: 0.2,
    stddev: 1.0,
    strength: Some(3.0),
};

/// Label reaches the modalities only directly.
pub const INTRA_WORLD: GaussianDesign = GaussianDesign {
    strength: None,
    ..BOTH_DEPS
};

/// Label reaches the modalities only through selection.
pub const INTER_WORLD: GaussianDesign = GaussianDesign {
    separation_1: 0.0,
    separation_2: 0.0,
    ..BOTH_DEPS
};

/// Training distribution carrying a strong selection-induced shortcut.
pub const SPURIOUS_SHIFT: GaussianDesign = GaussianDesign {
    strength: Some(6.0),
    ..BOTH_DEPS
};

/// Class means so far apart relative to the noise that the label is
/// essentially determined by either modality.
pub const NEAR_DETERMINISTIC: GaussianDesign = GaussianDesign {
    signal_dims: 2,
    interaction_dims: 2,
    separation_1: 1.0,
    separation_2: 1.0,
    stddev: 0.01,
    strength: None,
};

/// Offset used by the `shift-means` OOD mode in the catalogue.
pub const SHIFT_MEANS_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PresetName {
    BothDeps,
    IntraWorld,
    InterWorld,
    SpuriousShiftTrain,
    SpuriousShiftTest,
    DiscreteD1,
    Uniform,
    NearDeterministic,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::BothDeps,
        PresetName::IntraWorld,
        PresetName::InterWorld,
        PresetName::SpuriousShiftTrain,
        PresetName::SpuriousShiftTest,
        PresetName::DiscreteD1,
        PresetName::Uniform,
        PresetName::NearDeterministic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::BothDeps => "both-deps",
            PresetName::IntraWorld => "intra-world",
            PresetName::InterWorld => "inter-world",
            PresetName::SpuriousShiftTrain => "spurious-shift-train",
            PresetName::SpuriousShiftTest => "spurious-shift-test",
            PresetName::DiscreteD1 => "discrete-d1",
            PresetName::Uniform => "uniform",
            PresetName::NearDeterministic => "near-deterministic",
        }
    }

    /// The shifted counterpart evaluated as out-of-distribution, if any.
    pub fn ood_counterpart(&self) -> Option<PresetName> {
        match self {
            PresetName::SpuriousShiftTrain => Some(PresetName::SpuriousShiftTest),
            _ => None,
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Looks a preset up by name.
pub fn preset(name: &str) -> Result<GenerativeSpec> {
    preset_spec(name.parse()?)
}

pub fn preset_spec(name: PresetName) -> Result<GenerativeSpec> {
    match name {
        PresetName::BothDeps => gaussian_spec(&BOTH_DEPS),
        PresetName::IntraWorld => gaussian_spec(&INTRA_WORLD),
        PresetName::InterWorld => gaussian_spec(&INTER_WORLD),
        PresetName::SpuriousShiftTrain => gaussian_spec(&SPURIOUS_SHIFT),
        PresetName::SpuriousShiftTest => {
            make_ood_spec(&gaussian_spec(&SPURIOUS_SHIFT)?, OodMode::DropSelection)
        }
        PresetName::DiscreteD1 => discrete_d1(),
        PresetName::Uniform => uniform_binary(),
        PresetName::NearDeterministic => gaussian_spec(&NEAR_DETERMINISTIC),
    }
}

/// Two-class gaussian spec laid out as `[signal block ; interaction block]`
/// in each modality.
pub fn gaussian_spec(design: &GaussianDesign) -> Result<GenerativeSpec> {
    let dim = design.signal_dims + design.interaction_dims;
    let means = |sep: f64| -> Vec<Vec<f64>> {
        [-1.0, 1.0]
            .iter()
            .map(|sign| {
                (0..dim)
                    .map(|i| if i < design.signal_dims { sign * sep } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    let selection = match design.strength {
        None => SelectionModel::Constant {
            value: CONSTANT_ACCEPTANCE,
        },
        Some(strength) => {
            let interaction = |sign: f64| -> Vec<Vec<f64>> {
                (0..dim)
                    .map(|i| {
                        (0..dim)
                            .map(|j| {
                                if i == j && i >= design.signal_dims {
                                    sign
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            };
            SelectionModel::Bilinear {
                strength,
                interactions: vec![interaction(1.0), interaction(-1.0)],
            }
        }
    };
    GenerativeSpec::new(
        vec![0.5, 0.5],
        ClassConditional::Gaussian {
            means: means(design.separation_1),
            stddev: design.stddev,
        },
        ClassConditional::Gaussian {
            means: means(design.separation_2),
            stddev: design.stddev,
        },
        selection,
    )
}

/// Two classes, binary symbols: `p(x = y | y) = 0.8`, `p(x' = y | y) = 0.7`,
/// acceptance 0.9 when `x XOR x' = y` and 0.1 otherwise.
pub fn discrete_d1() -> Result<GenerativeSpec> {
    let accept = (0..2)
        .map(|y| {
            (0..2)
                .map(|x: usize| {
                    (0..2)
                        .map(|xp: usize| if (x ^ xp) == y { 0.9 } else { 0.1 })
                        .collect()
                })
                .collect()
        })
        .collect();
    GenerativeSpec::new(
        vec![0.5, 0.5],
        ClassConditional::Categorical {
            table: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
        },
        ClassConditional::Categorical {
            table: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        },
        SelectionModel::Table { accept },
    )
}

/// Two classes, binary symbols, every factor uniform.
pub fn uniform_binary() -> Result<GenerativeSpec> {
    GenerativeSpec::new(
        vec![0.5, 0.5],
        ClassConditional::Categorical {
            table: vec![vec![0.5, 0.5]; 2],
        },
        ClassConditional::Categorical {
            table: vec![vec![0.5, 0.5]; 2],
        },
        SelectionModel::Constant { value: 1.0 },
    )
}
