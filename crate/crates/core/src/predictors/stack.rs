use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::{ExpertRole, Featurizer};
use crate::error::{Error, Result};
use crate::genmodel::Sample;
use crate::nncore::{softmax, softmax_row, Mlp, RealMatrix};

/// One factor of the product: a network reading one view of the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub role: ExpertRole,
    pub featurizer: Featurizer,
    pub net: Mlp,
}

impl Expert {
    pub fn new(role: ExpertRole, featurizer: Featurizer, net: Mlp) -> Result<Self> {
        if featurizer.output_dim() != net.input_size() {
            return Err(Error::dim(format!(
                "{role} featurizer emits {} features, network expects {}",
                featurizer.output_dim(),
                net.input_size()
            )));
        }
        Ok(Self {
            role,
            featurizer,
            net,
        })
    }

    pub fn logits(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.net.logits(&self.featurizer.apply(sample)?)
    }
}

/// Which experts a predictor combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "uni-1")]
    Uni1,
    #[serde(rename = "uni-2")]
    Uni2,
    #[serde(rename = "intra")]
    Intra,
    #[serde(rename = "inter")]
    Inter,
    #[serde(rename = "i2m2")]
    I2m2,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Uni1,
        Variant::Uni2,
        Variant::Intra,
        Variant::Inter,
        Variant::I2m2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Uni1 => "uni-1",
            Variant::Uni2 => "uni-2",
            Variant::Intra => "intra",
            Variant::Inter => "inter",
            Variant::I2m2 => "i2m2",
        }
    }

    pub fn roles(&self) -> &'static [ExpertRole] {
        use ExpertRole::*;
        match self {
            Variant::Uni1 => &[Modality1],
            Variant::Uni2 => &[Modality2],
            Variant::Intra => &[Modality1, Modality2],
            Variant::Inter => &[Joint],
            Variant::I2m2 => &[Modality1, Modality2, Joint],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// Experts combined by summing logits, plus `λ · prior_logits`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorStack {
    experts: Vec<Expert>,
    active: Vec<bool>,
    prior_logits: Vec<f64>,
    prior_coefficient: f64,
}

impl PredictorStack {
    /// A stack with every expert active.
    pub fn new(experts: Vec<Expert>, prior_logits: Vec<f64>, prior_coefficient: f64) -> Result<Self> {
        let active = vec![true; experts.len()];
        Self::with_active(experts, active, prior_logits, prior_coefficient)
    }

    pub fn with_active(
        experts: Vec<Expert>,
        active: Vec<bool>,
        prior_logits: Vec<f64>,
        prior_coefficient: f64,
    ) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::invalid("a stack needs at least one expert"));
        }
        if active.len() != experts.len() {
            return Err(Error::dim("one activation flag per expert"));
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::invalid("a stack needs at least one active expert"));
        }
        let c = prior_logits.len();
        if let Some(e) = experts.iter().find(|e| e.net.output_size() != c) {
            return Err(Error::dim(format!(
                "{} expert emits {} classes, prior has {c}",
                e.role,
                e.net.output_size()
            )));
        }
        if !prior_logits.iter().all(|v| v.is_finite()) || !prior_coefficient.is_finite() {
            return Err(Error::NonFinite("prior logits".into()));
        }
        Ok(Self {
            experts,
            active,
            prior_logits,
            prior_coefficient,
        })
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [Expert] {
        &mut self.experts
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_experts(&self) -> impl Iterator<Item = &Expert> {
        self.experts.iter().zip(&self.active).filter(|(_, &a)| a).map(|(e, _)| e)
    }

    pub fn num_classes(&self) -> usize {
        self.prior_logits.len()
    }

    pub fn prior_logits(&self) -> &[f64] {
        &self.prior_logits
    }

    pub fn prior_coefficient(&self) -> f64 {
        self.prior_coefficient
    }

    pub fn set_prior_coefficient(&mut self, lambda: f64) -> Result<()> {
        if !lambda.is_finite() {
            return Err(Error::NonFinite("prior coefficient".into()));
        }
        self.prior_coefficient = lambda;
        Ok(())
    }

    /// Summed logits of the active experts plus the weighted prior.
    pub fn combine(&self, sample: &Sample) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = self
            .prior_logits
            .iter()
            .map(|p| self.prior_coefficient * p)
            .collect();
        for e in self.active_experts() {
            for (o, l) in out.iter_mut().zip(e.logits(sample)?) {
                *o += l;
            }
        }
        Ok(out)
    }

    pub fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(softmax_row(&self.combine(sample)?))
    }

    /// [`combine`](Self::combine) for many samples at once, one row each.
    pub fn combine_batch(&self, samples: &[Sample]) -> Result<RealMatrix> {
        let features: Vec<RealMatrix> = self
            .active_experts()
            .map(|e| e.featurizer.matrix(samples))
            .collect::<Result<_>>()?;
        let nets: Vec<&Mlp> = self.active_experts().map(|e| &e.net).collect();
        combine_features(&nets, &features, &self.prior_logits, self.prior_coefficient)
    }

    pub fn predict_proba_batch(&self, samples: &[Sample]) -> Result<RealMatrix> {
        Ok(softmax(&self.combine_batch(samples)?))
    }

    /// Copy with exactly the experts of `variant`'s roles active.
    pub fn restrict(&self, variant: Variant) -> Result<PredictorStack> {
        let roles = variant.roles();
        for role in roles {
            if !self.experts.iter().any(|e| e.role == *role) {
                return Err(Error::invalid(format!(
                    "variant {variant} needs a {role} expert"
                )));
            }
        }
        let mut out = self.clone();
        out.active = self.experts.iter().map(|e| roles.contains(&e.role)).collect();
        Ok(out)
    }

    /// Total scalar parameters of the active experts.
    pub fn count_parameters(&self) -> Result<usize> {
        if !self.active.iter().any(|&a| a) {
            return Err(Error::invalid("no active experts"));
        }
        Ok(self.active_experts().map(|e| e.net.parameter_count()).sum())
    }
}

/// Sums per-network logits over pre-featurized inputs and adds the prior.
pub(crate) fn combine_features(
    nets: &[&Mlp],
    features: &[RealMatrix],
    prior_logits: &[f64],
    prior_coefficient: f64,
) -> Result<RealMatrix> {
    let rows = features[0].rows();
    let c = prior_logits.len();
    let mut out = RealMatrix::zeros(rows, c);
    for r in 0..rows {
        for (o, p) in out.row_mut(r).iter_mut().zip(prior_logits) {
            *o = prior_coefficient * p;
        }
    }
    for (net, x) in nets.iter().zip(features) {
        let (logits, _) = net.forward(x)?;
        for (o, l) in out.values_mut().iter_mut().zip(logits.values()) {
            *o += l;
        }
    }
    Ok(out)
}

/// Log empirical class frequencies. Absent classes get a large finite
/// negative value so the logits stay finite.
pub fn empirical_prior_logits(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} outside {num_classes} classes")));
        }
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&k| if k == 0 { ABSENT_CLASS_LOGIT } else { (k as f64 / n).ln() })
        .collect())
}

pub const ABSENT_CLASS_LOGIT: f64 = -1e3;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{ModalityShape, Observation};
    use crate::nncore::{Layer, RngStream};
    use proptest::prelude::*;

    fn linear(weights: &[&[f64]], bias: &[f64]) -> Mlp {
        let w = RealMatrix::from_rows(weights).unwrap();
        Mlp::from_layers(vec![Layer::new(w, bias.to_vec()).unwrap()]).unwrap()
    }

    fn sample(x: &[f64], xp: &[f64]) -> Sample {
        Sample {
            x: Observation::Vector(x.to_vec()),
            x_prime: Observation::Vector(xp.to_vec()),
            y: 0,
        }
    }

    const SHAPES: (ModalityShape, ModalityShape) = (ModalityShape::Vector(2), ModalityShape::Vector(3));

    fn random_stack(rng: &mut RngStream, classes: usize) -> PredictorStack {
        let experts = ExpertRole::ALL
            .iter()
            .map(|&role| {
                let f = Featurizer::for_role(role, SHAPES);
                let net = Mlp::init(&[f.output_dim(), 4, classes], rng).unwrap();
                Expert::new(role, f, net).unwrap()
            })
            .collect();
        let prior: Vec<f64> = (0..classes).map(|_| rng.normal()).collect();
        PredictorStack::new(experts, prior, 0.7).unwrap()
    }

    fn random_sample(rng: &mut RngStream) -> Sample {
        let x: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
        let xp: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        sample(&x, &xp)
    }

    #[test]
    fn two_expert_oracle() {
        let e1 = Expert::new(ExpertRole::Modality1, Featurizer::IdentityX(1), linear(&[&[1.0], &[0.0]], &[0.0, 0.0]))
            .unwrap();
        let e2 = Expert::new(
            ExpertRole::Modality2,
            Featurizer::IdentityXPrime(1),
            linear(&[&[0.5], &[0.0]], &[0.0, 0.0]),
        )
        .unwrap();
        let stack = PredictorStack::new(vec![e1, e2], vec![0.0, 0.0], 0.0).unwrap();
        let s = sample(&[1.0], &[1.0]);
        assert_eq!(stack.combine(&s).unwrap(), vec![1.5, 0.0]);
        let p = stack.predict_proba(&s).unwrap();
        assert!((p[0] - 0.817574).abs() < 1e-6);
        assert!((p[1] - 0.182426).abs() < 1e-6);
    }

    #[test]
    fn single_expert_is_its_own_softmax() {
        let mut rng = RngStream::new(2);
        let stack = random_stack(&mut rng, 3).restrict(Variant::Uni1).unwrap();
        let mut stack = stack;
        stack.set_prior_coefficient(0.0).unwrap();
        let s = random_sample(&mut rng);
        let own = softmax_row(&stack.experts()[0].logits(&s).unwrap());
        assert_eq!(stack.predict_proba(&s).unwrap(), own);
    }

    #[test]
    fn zero_experts_give_uniform_or_prior() {
        let zero = |role: ExpertRole| {
            let f = Featurizer::for_role(role, SHAPES);
            Expert::new(role, f, linear(&vec![&[0.0; 5][..f.output_dim()]; 2], &[0.0, 0.0])).unwrap()
        };
        let experts: Vec<Expert> = ExpertRole::ALL.iter().map(|&r| zero(r)).collect();
        let prior = empirical_prior_logits(&[0, 0, 0, 1], 2).unwrap();
        let mut stack = PredictorStack::new(experts, prior, 0.0).unwrap();
        let s = sample(&[0.3, -1.0], &[1.0, 2.0, 3.0]);
        assert_eq!(stack.predict_proba(&s).unwrap(), vec![0.5, 0.5]);
        stack.set_prior_coefficient(1.0).unwrap();
        let p = stack.predict_proba(&s).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = RngStream::new(5);
        let stack = random_stack(&mut rng, 3);
        let samples: Vec<Sample> = (0..7).map(|_| random_sample(&mut rng)).collect();
        let batch = stack.predict_proba_batch(&samples).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let single = stack.predict_proba(s).unwrap();
            for (a, b) in batch.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_invariance_on_random_stacks() {
        let mut rng = RngStream::new(11);
        for _ in 0..100 {
            let classes = 2 + rng.below(4);
            let stack = random_stack(&mut rng, classes);
            let s = random_sample(&mut rng);
            let base = stack.predict_proba(&s).unwrap();
            assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let k = rng.below(3);
            let shift = 10.0 * rng.normal();
            let mut shifted = stack.clone();
            let layers = shifted.experts_mut()[k].net.layers().to_vec();
            let last = layers.len() - 1;
            let mut layers = layers;
            let bias: Vec<f64> = layers[last].bias.iter().map(|b| b + shift).collect();
            layers[last] = Layer::new(layers[last].weight.clone(), bias).unwrap();
            shifted.experts_mut()[k].net = Mlp::from_layers(layers).unwrap();
            let moved = shifted.predict_proba(&s).unwrap();
            for (a, b) in base.iter().zip(&moved) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn inter_restriction_is_the_joint_expert() {
        let mut rng = RngStream::new(8);
        let stack = random_stack(&mut rng, 3);
        let inter = stack.restrict(Variant::Inter).unwrap();
        let s = random_sample(&mut rng);
        let joint = stack.experts().iter().find(|e| e.role == ExpertRole::Joint).unwrap();
        let expected: Vec<f64> = joint
            .logits(&s)
            .unwrap()
            .iter()
            .zip(stack.prior_logits())
            .map(|(l, p)| 0.7 * p + l)
            .collect();
        assert_eq!(inter.combine(&s).unwrap(), expected);
    }

    #[test]
    fn restrict_is_idempotent_and_sets_flags() {
        let mut rng = RngStream::new(9);
        let stack = random_stack(&mut rng, 2);
        for v in Variant::ALL {
            let once = stack.restrict(v).unwrap();
            assert_eq!(once.restrict(v).unwrap(), once);
            let roles: Vec<ExpertRole> = once.active_experts().map(|e| e.role).collect();
            assert_eq!(roles, v.roles());
        }
        let intra = stack.restrict(Variant::Intra).unwrap();
        assert!(intra.restrict(Variant::I2m2).unwrap().active().iter().all(|&a| a));
    }

    #[test]
    fn restrict_needs_the_roles() {
        let mut rng = RngStream::new(1);
        let f = Featurizer::for_role(ExpertRole::Modality1, SHAPES);
        let e = Expert::new(ExpertRole::Modality1, f, Mlp::init(&[2, 2], &mut rng).unwrap()).unwrap();
        let stack = PredictorStack::new(vec![e], vec![0.0, 0.0], 0.0).unwrap();
        assert!(stack.restrict(Variant::Inter).is_err());
        assert!(stack.restrict(Variant::Uni1).is_ok());
    }

    #[test]
    fn inactive_experts_do_not_matter() {
        let mut rng = RngStream::new(12);
        let stack = random_stack(&mut rng, 3);
        let samples: Vec<Sample> = (0..5).map(|_| random_sample(&mut rng)).collect();
        for (variant, untouched) in [
            (Variant::Inter, vec![0, 1]),
            (Variant::Intra, vec![2]),
        ] {
            let restricted = stack.restrict(variant).unwrap();
            let before = restricted.combine_batch(&samples).unwrap();
            let mut mutated = restricted.clone();
            for k in untouched {
                mutated.experts_mut()[k].net.for_each_parameter_mut(|p| *p = 3.0 * *p + 1.0);
            }
            let after = mutated.combine_batch(&samples).unwrap();
            assert_eq!(before.values(), after.values());
            assert_eq!(
                restricted.count_parameters().unwrap(),
                mutated.count_parameters().unwrap()
            );
        }
    }

    #[test]
    fn parameter_counts() {
        let mut rng = RngStream::new(3);
        let f = Featurizer::IdentityX(5);
        let e = Expert::new(ExpertRole::Modality1, f, Mlp::init(&[5, 3], &mut rng).unwrap()).unwrap();
        let single = PredictorStack::new(vec![e], vec![0.0; 3], 0.0).unwrap();
        assert_eq!(single.count_parameters().unwrap(), 18);

        let stack = random_stack(&mut rng, 3);
        let total: usize = stack.experts().iter().map(|e| e.net.parameter_count()).sum();
        assert_eq!(stack.count_parameters().unwrap(), total);
        // 2→4→3, 3→4→3 and 5→4→3
        assert_eq!(total, (12 + 15) + (16 + 15) + (24 + 15));
    }

    #[test]
    fn single_layer_with_bias_counts_twenty() {
        let mut rng = RngStream::new(4);
        let f = Featurizer::IdentityX(3);
        let e = Expert::new(ExpertRole::Modality1, f, Mlp::init(&[3, 5], &mut rng).unwrap()).unwrap();
        let stack = PredictorStack::new(vec![e], vec![0.0; 5], 0.0).unwrap();
        assert_eq!(stack.count_parameters().unwrap(), 20);
    }

    #[test]
    fn construction_errors() {
        let mut rng = RngStream::new(6);
        let f = Featurizer::IdentityX(2);
        assert!(Expert::new(ExpertRole::Modality1, f, Mlp::init(&[3, 2], &mut rng).unwrap()).is_err());
        let e = Expert::new(ExpertRole::Modality1, f, Mlp::init(&[2, 2], &mut rng).unwrap()).unwrap();
        assert!(PredictorStack::new(vec![], vec![0.0, 0.0], 0.0).is_err());
        assert!(PredictorStack::new(vec![e.clone()], vec![0.0; 3], 0.0).is_err());
        assert!(PredictorStack::with_active(vec![e.clone()], vec![false], vec![0.0; 2], 0.0).is_err());
        assert!(PredictorStack::new(vec![e], vec![0.0, f64::NAN], 0.0).is_err());
    }

    #[test]
    fn prior_logits_are_log_frequencies() {
        let p = empirical_prior_logits(&[0, 1, 1, 1], 3).unwrap();
        assert!((p[0] - 0.25f64.ln()).abs() < 1e-15);
        assert!((p[1] - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(p[2], ABSENT_CLASS_LOGIT);
        assert!(empirical_prior_logits(&[], 2).is_err());
        assert!(empirical_prior_logits(&[2], 2).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("late".parse::<Variant>().is_err());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in 0u64..500, scale in 0.1f64..50.0) {
            let mut rng = RngStream::new(seed);
            let stack = random_stack(&mut rng, 4);
            let s = random_sample(&mut rng);
            let scaled = Sample {
                x: Observation::Vector(s.x.as_vector().unwrap().iter().map(|v| v * scale).collect()),
                ..s
            };
            let p = stack.predict_proba(&scaled).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
