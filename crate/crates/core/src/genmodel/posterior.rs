use super::sampling::{log_selection_prob, sample_dataset, selection_prob};
use super::spec::{GenerativeSpec, ModalityShape, Observation};
use crate::error::{Error, Result};
use crate::nncore::{log_sum_exp, RngStream};

/// Selection-conditioned joint `p(y, x, x' | v = 1)` over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    num_classes: usize,
    support_1: usize,
    support_2: usize,
    /// Indexed `[y][x][x']`, flattened.
    probs: Vec<f64>,
    /// `p(v = 1)`, the normalizer.
    evidence: f64,
}

impl JointTable {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn supports(&self) -> (usize, usize) {
        (self.support_1, self.support_2)
    }

    pub fn prob(&self, y: usize, x: usize, x_prime: usize) -> f64 {
        self.probs[(y * self.support_1 + x) * self.support_2 + x_prime]
    }

    pub fn evidence(&self) -> f64 {
        self.evidence
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Iterates `(y, x, x', probability)` in index order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let (n1, n2) = (self.support_1, self.support_2);
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (i / (n1 * n2), (i / n2) % n1, i % n2, p))
    }

    /// `p(x, x' | v = 1)`.
    pub fn input_mass(&self, x: usize, x_prime: usize) -> f64 {
        (0..self.num_classes).map(|y| self.prob(y, x, x_prime)).sum()
    }

    /// `p(y | x, x', v = 1)`; `None` where the input has zero mass.
    pub fn conditional(&self, x: usize, x_prime: usize) -> Option<Vec<f64>> {
        let mass = self.input_mass(x, x_prime);
        (mass > 0.0).then(|| {
            (0..self.num_classes)
                .map(|y| self.prob(y, x, x_prime) / mass)
                .collect()
        })
    }

    /// Accuracy of the argmax-posterior rule, summed exactly over the support.
    pub fn bayes_accuracy(&self) -> f64 {
        let mut acc = 0.0;
        for x in 0..self.support_1 {
            for xp in 0..self.support_2 {
                acc += (0..self.num_classes)
                    .map(|y| self.prob(y, x, xp))
                    .fold(0.0, f64::max);
            }
        }
        acc
    }

    /// `I(x; x' | y)` in nats.
    pub fn conditional_mutual_information(&self) -> f64 {
        let mut cmi = 0.0;
        for y in 0..self.num_classes {
            let p_y: f64 = (0..self.support_1)
                .flat_map(|x| (0..self.support_2).map(move |xp| (x, xp)))
                .map(|(x, xp)| self.prob(y, x, xp))
                .sum();
            if p_y == 0.0 {
                continue;
            }
            let p_x: Vec<f64> = (0..self.support_1)
                .map(|x| (0..self.support_2).map(|xp| self.prob(y, x, xp)).sum())
                .collect();
            let p_xp: Vec<f64> = (0..self.support_2)
                .map(|xp| (0..self.support_1).map(|x| self.prob(y, x, xp)).sum())
                .collect();
            for x in 0..self.support_1 {
                for xp in 0..self.support_2 {
                    let p = self.prob(y, x, xp);
                    if p > 0.0 {
                        cmi += p * (p * p_y / (p_x[x] * p_xp[xp])).ln();
                    }
                }
            }
        }
        cmi
    }
}

/// Brute-force enumeration of the selection-conditioned joint.
pub fn enumerate_joint(spec: &GenerativeSpec) -> Result<JointTable> {
    spec.validate()?;
    let (ModalityShape::Symbols(n1), ModalityShape::Symbols(n2)) = spec.shapes() else {
        return Err(Error::Unsupported(
            "enumeration requires categorical modalities".into(),
        ));
    };
    let (
        super::ClassConditional::Categorical { table: t1 },
        super::ClassConditional::Categorical { table: t2 },
    ) = (&spec.modality_1, &spec.modality_2)
    else {
        unreachable!("shapes are categorical");
    };
    let c = spec.num_classes;
    let mut probs = Vec::with_capacity(c * n1 * n2);
    for y in 0..c {
        for x in 0..n1 {
            for xp in 0..n2 {
                let sel = selection_prob(spec, &Observation::Symbol(x), &Observation::Symbol(xp), y)?;
                probs.push(spec.prior[y] * t1[y][x] * t2[y][xp] * sel);
            }
        }
    }
    let evidence: f64 = probs.iter().sum();
    if evidence <= 0.0 {
        return Err(Error::Degenerate("selection-conditioned joint has zero mass".into()));
    }
    probs.iter_mut().for_each(|p| *p /= evidence);
    Ok(JointTable {
        num_classes: c,
        support_1: n1,
        support_2: n2,
        probs,
        evidence,
    })
}

/// Unnormalized log posterior `ln p(y) + ln p(x|y) + ln p(x'|y) + ln p(v=1|x,x',y)`.
pub fn log_joint_scores(
    spec: &GenerativeSpec,
    x: &Observation,
    x_prime: &Observation,
) -> Result<Vec<f64>> {
    spec.check_observations(x, x_prime)?;
    (0..spec.num_classes)
        .map(|y| {
            Ok(spec.prior[y].ln()
                + spec.modality_1.log_density(x, y)?
                + spec.modality_2.log_density(x_prime, y)?
                + log_selection_prob(spec, x, x_prime, y)?)
        })
        .collect()
}

/// Exact `p(y | x, x', v = 1)` from the known generative parameters.
pub fn exact_posterior(
    spec: &GenerativeSpec,
    x: &Observation,
    x_prime: &Observation,
) -> Result<Vec<f64>> {
    let scores = log_joint_scores(spec, x, x_prime)?;
    let norm = log_sum_exp(&scores);
    if norm == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "every class has zero posterior mass at this input".into(),
        ));
    }
    Ok(scores.iter().map(|s| (s - norm).exp()).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Accuracy of the exact-posterior argmax on `n_mc` fresh samples.
pub fn bayes_accuracy(spec: &GenerativeSpec, n_mc: usize, rng: &mut RngStream) -> Result<McEstimate> {
    if n_mc < 1000 {
        return Err(Error::invalid(format!("need at least 1000 Monte-Carlo samples, got {n_mc}")));
    }
    let data = sample_dataset(spec, n_mc, rng)?;
    let mut correct = 0usize;
    for s in data.samples() {
        let post = exact_posterior(spec, &s.x, &s.x_prime)?;
        if argmax(&post) == s.y {
            correct += 1;
        }
    }
    let p = correct as f64 / n_mc as f64;
    Ok(McEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / n_mc as f64).sqrt(),
        samples: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{
        collapse_means, discrete_d1, make_ood_spec, preset, sample_dataset_with_stats,
        uniform_binary, ClassConditional, OodMode, SelectionModel,
    };
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn sym(i: usize) -> Observation {
        Observation::Symbol(i)
    }

    fn with_selection(spec: &GenerativeSpec, selection: SelectionModel) -> GenerativeSpec {
        let mut out = spec.clone();
        out.selection = selection;
        out.validate().unwrap();
        out
    }

    #[test]
    fn uniform_enumeration_is_flat() {
        let table = enumerate_joint(&uniform_binary().unwrap()).unwrap();
        for (_, _, _, p) in table.cells() {
            assert!((p - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn d1_unnormalized_cell() {
        let table = enumerate_joint(&discrete_d1().unwrap()).unwrap();
        let unnormalized = table.prob(1, 1, 0) * table.evidence();
        assert!((unnormalized - 0.108).abs() < 1e-15);
        assert!((table.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn d1_posterior_values() {
        let spec = discrete_d1().unwrap();
        let post = exact_posterior(&spec, &sym(1), &sym(0)).unwrap();
        assert!((post[1] - 0.108 / 0.115).abs() < 1e-12);
        assert!((post[1] - 0.93913).abs() < 1e-5);

        let flat = with_selection(&spec, SelectionModel::Constant { value: 0.5 });
        let post = exact_posterior(&flat, &sym(1), &sym(0)).unwrap();
        assert!((post[1] - 0.12 / 0.19).abs() < 1e-12);
        assert!((post[1] - 0.63158).abs() < 1e-5);
    }

    #[test]
    fn posterior_matches_enumeration_everywhere() {
        let spec = discrete_d1().unwrap();
        let table = enumerate_joint(&spec).unwrap();
        for x in 0..2 {
            for xp in 0..2 {
                let post = exact_posterior(&spec, &sym(x), &sym(xp)).unwrap();
                let cond = table.conditional(x, xp).unwrap();
                for y in 0..2 {
                    assert!((post[y] - cond[y]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uninformative_evidence_returns_prior() {
        let mut spec = uniform_binary().unwrap();
        spec.prior = vec![0.3, 0.7];
        let post = exact_posterior(&spec, &sym(0), &sym(1)).unwrap();
        assert!((post[0] - 0.3).abs() < 1e-15 && (post[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_is_reported() {
        let spec = GenerativeSpec::new(
            vec![0.5, 0.5],
            ClassConditional::Categorical {
                table: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            },
            ClassConditional::Categorical {
                table: vec![vec![0.5, 0.5]; 2],
            },
            SelectionModel::Constant { value: 1.0 },
        )
        .unwrap();
        assert!(matches!(
            exact_posterior(&spec, &sym(1), &sym(0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn enumeration_rejects_gaussian() {
        let spec = preset("both-deps").unwrap();
        assert!(matches!(enumerate_joint(&spec), Err(Error::Unsupported(_))));
    }

    #[test]
    fn explaining_away_information() {
        let d1 = discrete_d1().unwrap();
        let cmi = enumerate_joint(&d1).unwrap().conditional_mutual_information();
        assert!(cmi > 1e-3, "{cmi}");
        let flat = with_selection(&d1, SelectionModel::Constant { value: 0.9 });
        let cmi = enumerate_joint(&flat).unwrap().conditional_mutual_information();
        assert!(cmi.abs() < 1e-12, "{cmi}");
    }

    #[test]
    fn class_independent_selection_gives_intra_product() {
        let d1 = discrete_d1().unwrap();
        // Selection depends on (x, x') but not y: it cancels in the posterior.
        let accept = vec![vec![vec![0.2, 0.9], vec![0.6, 0.3]]; 2];
        let spec = with_selection(&d1, SelectionModel::Table { accept });
        for x in 0..2 {
            for xp in 0..2 {
                let post = exact_posterior(&spec, &sym(x), &sym(xp)).unwrap();
                let unnorm: Vec<f64> = (0..2)
                    .map(|y| {
                        let p1 = if x == y { 0.8 } else { 0.2 };
                        let p2 = if xp == y { 0.7 } else { 0.3 };
                        0.5 * p1 * p2
                    })
                    .collect();
                let z: f64 = unnorm.iter().sum();
                for y in 0..2 {
                    assert!((post[y] - unnorm[y] / z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_conditionals_give_prior_times_selection() {
        let d1 = discrete_d1().unwrap();
        let mut spec = d1.clone();
        spec.prior = vec![0.4, 0.6];
        spec.modality_1 = ClassConditional::Categorical {
            table: vec![vec![0.35, 0.65]; 2],
        };
        spec.modality_2 = ClassConditional::Categorical {
            table: vec![vec![0.9, 0.1]; 2],
        };
        spec.validate().unwrap();
        for x in 0..2 {
            for xp in 0..2 {
                let post = exact_posterior(&spec, &sym(x), &sym(xp)).unwrap();
                let unnorm: Vec<f64> = (0..2)
                    .map(|y| {
                        spec.prior[y] * selection_prob(&spec, &sym(x), &sym(xp), y).unwrap()
                    })
                    .collect();
                let z: f64 = unnorm.iter().sum();
                for y in 0..2 {
                    assert!((post[y] - unnorm[y] / z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn d1_bayes_accuracy_exact_and_mc() {
        let spec = discrete_d1().unwrap();
        let exact = enumerate_joint(&spec).unwrap().bayes_accuracy();
        // Brute force over the eight cells, independent of the table helper.
        let mut best = 0.0;
        let mut total = 0.0;
        for x in 0..2 {
            for xp in 0..2 {
                let cell = |y: usize| {
                    let p1 = if x == y { 0.8 } else { 0.2 };
                    let p2 = if xp == y { 0.7 } else { 0.3 };
                    let s = if (x ^ xp) == y { 0.9 } else { 0.1 };
                    0.5f64 * p1 * p2 * s
                };
                best += cell(0).max(cell(1));
                total += cell(0) + cell(1);
            }
        }
        assert!((exact - best / total).abs() < 1e-12);
        let mc = bayes_accuracy(&spec, 20_000, &mut RngStream::new(5)).unwrap();
        assert!((mc.estimate - exact).abs() < 3.0 * mc.std_error, "{mc:?} vs {exact}");
    }

    #[test]
    fn uniform_bayes_is_chance() {
        let mc = bayes_accuracy(&uniform_binary().unwrap(), 20_000, &mut RngStream::new(2)).unwrap();
        assert!((mc.estimate - 0.5).abs() < 3.0 * mc.std_error);
    }

    #[test]
    fn separable_gaussian_bayes_is_near_perfect() {
        let mc =
            bayes_accuracy(&preset("near-deterministic").unwrap(), 5_000, &mut RngStream::new(3))
                .unwrap();
        assert!(mc.estimate >= 0.999, "{mc:?}");
    }

    #[test]
    fn bayes_needs_enough_samples() {
        assert!(bayes_accuracy(&discrete_d1().unwrap(), 999, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn sampler_matches_enumeration_chi_square() {
        let spec = discrete_d1().unwrap();
        let table = enumerate_joint(&spec).unwrap();
        let n = 200_000;
        let (data, _) = sample_dataset_with_stats(&spec, n, &mut RngStream::new(11)).unwrap();
        let mut counts = [0usize; 8];
        for s in data.samples() {
            let (x, xp) = (s.x.as_symbol().unwrap(), s.x_prime.as_symbol().unwrap());
            counts[(s.y * 2 + x) * 2 + xp] += 1;
        }
        let stat: f64 = table
            .cells()
            .map(|(y, x, xp, p)| {
                let expected = p * n as f64;
                let diff = counts[(y * 2 + x) * 2 + xp] as f64 - expected;
                diff * diff / expected
            })
            .sum();
        let critical = ChiSquared::new(7.0).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn drop_selection_on_d1_is_intra_posterior() {
        let d1 = discrete_d1().unwrap();
        let dropped = make_ood_spec(&d1, OodMode::DropSelection).unwrap();
        for x in 0..2 {
            for xp in 0..2 {
                let post = exact_posterior(&dropped, &sym(x), &sym(xp)).unwrap();
                let p1 = |y: usize| if x == y { 0.8 } else { 0.2 };
                let p2 = |y: usize| if xp == y { 0.7 } else { 0.3 };
                let z = p1(0) * p2(0) + p1(1) * p2(1);
                assert!((post[1] - p1(1) * p2(1) / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inter_world_without_selection_is_prior() {
        let spec = preset("inter-world").unwrap();
        let dropped = make_ood_spec(&spec, OodMode::DropSelection).unwrap();
        let data = sample_dataset(&spec, 200, &mut RngStream::new(4)).unwrap();
        for s in data.samples() {
            let post = exact_posterior(&dropped, &s.x, &s.x_prime).unwrap();
            assert!((post[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn intra_world_posterior_ignores_selection_strength() {
        let spec = preset("intra-world").unwrap();
        let data = sample_dataset(&spec, 200, &mut RngStream::new(6)).unwrap();
        let other = with_selection(&spec, SelectionModel::Constant { value: 0.05 });
        for s in data.samples() {
            let a = exact_posterior(&spec, &s.x, &s.x_prime).unwrap();
            let b = exact_posterior(&other, &s.x, &s.x_prime).unwrap();
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn both_deps_needs_both_dependencies() {
        let spec = preset("both-deps").unwrap();
        let n = 40_000;
        let full = bayes_accuracy(&spec, n, &mut RngStream::new(21)).unwrap();
        let no_sel = make_ood_spec(&spec, OodMode::DropSelection).unwrap();
        let no_sel = bayes_accuracy(&no_sel, n, &mut RngStream::new(22)).unwrap();
        let no_means = collapse_means(&spec).unwrap();
        let no_means = bayes_accuracy(&no_means, n, &mut RngStream::new(23)).unwrap();
        for ablated in [no_sel, no_means] {
            let slack = 3.0 * (full.std_error.powi(2) + ablated.std_error.powi(2)).sqrt();
            assert!(
                full.estimate - ablated.estimate >= 0.02 + slack,
                "{full:?} vs {ablated:?}"
            );
        }
    }
}
