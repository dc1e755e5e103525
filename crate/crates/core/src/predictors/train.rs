use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::{ExpertRole, Featurizer};
use super::stack::{combine_features, empirical_prior_logits, Expert, PredictorStack, Variant};
use crate::error::{Error, Result};
use crate::genmodel::{Dataset, Sample};
use crate::nncore::{cross_entropy, Mlp, RealMatrix, RngStream};

/// Which training stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Per-expert pretraining, then joint fine-tuning through the combiner.
    TwoStage,
    /// Per-expert training only; experts are combined as trained.
    PretrainOnly,
    /// Joint training from a fresh initialization, for
    /// `epochs_stage1 + epochs_stage2` epochs at `lr_stage1`.
    JointFromScratch,
}

impl Schedule {
    pub const ALL: [Schedule; 3] = [
        Schedule::TwoStage,
        Schedule::PretrainOnly,
        Schedule::JointFromScratch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Schedule::TwoStage => "two-stage",
            Schedule::PretrainOnly => "pretrain-only",
            Schedule::JointFromScratch => "joint-from-scratch",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Schedule::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown schedule `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_stage1: f64,
    /// Defaults to `lr_stage1 / 10` when unset.
    pub lr_stage2: Option<f64>,
    pub weight_decay: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    /// Hidden layer widths of each unimodal expert.
    pub hidden_unimodal: Vec<usize>,
    /// Hidden layer widths of the joint expert.
    pub hidden_joint: Vec<usize>,
    /// Weight λ of the empirical prior logits in the combiner.
    pub prior_coefficient: f64,
    pub schedule: Schedule,
    /// Select the fine-tuning start by training loss and cap the training
    /// loss of returned snapshots at that start.
    pub monotone_coverage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_stage1: 0.05,
            lr_stage2: None,
            weight_decay: 1e-4,
            epochs_stage1: 100,
            epochs_stage2: 40,
            batch_size: 64,
            validation_fraction: 0.2,
            patience: 10,
            seed: 0,
            hidden_unimodal: Vec::new(),
            hidden_joint: vec![6],
            prior_coefficient: 0.0,
            schedule: Schedule::TwoStage,
            monotone_coverage: false,
        }
    }
}

impl TrainConfig {
    pub fn stage2_lr(&self) -> f64 {
        self.lr_stage2.unwrap_or(self.lr_stage1 / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_stage1", self.lr_stage1)?;
        positive("lr_stage2", self.stage2_lr())?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be positive"));
        }
        if self.hidden_unimodal.contains(&0) || self.hidden_joint.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if !self.prior_coefficient.is_finite() {
            return Err(Error::invalid("prior_coefficient must be finite"));
        }
        Ok(())
    }

    pub fn hidden_for(&self, role: ExpertRole) -> &[usize] {
        match role {
            ExpertRole::Joint => &self.hidden_joint,
            _ => &self.hidden_unimodal,
        }
    }

    /// Training and validation sizes for `n` samples.
    pub fn split_sizes(&self, n: usize) -> Result<(usize, usize)> {
        let n_val = ((n as f64 * self.validation_fraction).round() as usize).max(1);
        let n_train = n.saturating_sub(n_val);
        if n_train < self.batch_size {
            return Err(Error::invalid(format!(
                "{n} samples with validation_fraction {} leave {n_train} for training, \
                 fewer than one batch of {}",
                self.validation_fraction, self.batch_size
            )));
        }
        Ok((n_train, n_val))
    }
}

/// Disjoint training and validation indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl DataSplit {
    pub fn new(n: usize, config: &TrainConfig, rng: &mut RngStream) -> Result<Self> {
        let (n_train, _) = config.split_sizes(n)?;
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let validation = order.split_off(n_train);
        Ok(Self {
            train: order,
            validation,
        })
    }
}

fn gather(samples: &[Sample], indices: &[usize]) -> Vec<Sample> {
    indices.iter().map(|&i| samples[i].clone()).collect()
}

struct Fold {
    features: Vec<RealMatrix>,
    labels: Vec<usize>,
}

impl Fold {
    fn new(featurizers: &[Featurizer], samples: &[Sample]) -> Result<Self> {
        Ok(Self {
            features: featurizers
                .iter()
                .map(|f| f.matrix(samples))
                .collect::<Result<_>>()?,
            labels: samples.iter().map(|s| s.y).collect(),
        })
    }
}

struct Combiner<'a> {
    prior_logits: &'a [f64],
    prior_coefficient: f64,
}

impl Combiner<'_> {
    fn loss(&self, nets: &[Mlp], fold: &Fold) -> Result<f64> {
        let refs: Vec<&Mlp> = nets.iter().collect();
        let logits = combine_features(&refs, &fold.features, self.prior_logits, self.prior_coefficient)?;
        Ok(cross_entropy(&logits, &fold.labels)?.0)
    }
}

struct FitSettings<'a> {
    lr: f64,
    weight_decay: f64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    /// Snapshots whose training loss exceeds this are never returned.
    train_loss_ceiling: Option<f64>,
    context: &'a str,
}

fn diverged(context: &str, epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(what) => Error::Diverged(format!(
            "{context}: non-finite {what} during epoch {epoch}"
        )),
        other => other,
    }
}

/// Mini-batch SGD on the cross-entropy of the summed logits of `nets`, with
/// early stopping on validation loss. The starting parameters are the first
/// snapshot, so zero epochs returns them unchanged.
fn fit(
    mut nets: Vec<Mlp>,
    combiner: &Combiner<'_>,
    train: &Fold,
    validation: &Fold,
    settings: &FitSettings<'_>,
    rng: &mut RngStream,
) -> Result<Vec<Mlp>> {
    let ctx = settings.context;
    let mut best = nets.clone();
    let mut best_val = combiner.loss(&nets, validation).map_err(|e| diverged(ctx, 0, e))?;
    if !best_val.is_finite() {
        return Err(Error::Diverged(format!("{ctx}: initial validation loss is {best_val}")));
    }
    let n = train.labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stale = 0;
    for epoch in 1..=settings.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(settings.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let inputs: Vec<RealMatrix> = train.features.iter().map(|f| f.select_rows(batch)).collect();
            let mut logits = RealMatrix::zeros(batch.len(), combiner.prior_logits.len());
            for r in 0..batch.len() {
                for (o, p) in logits.row_mut(r).iter_mut().zip(combiner.prior_logits) {
                    *o = combiner.prior_coefficient * p;
                }
            }
            let mut caches = Vec::with_capacity(nets.len());
            for (net, x) in nets.iter().zip(&inputs) {
                let (out, cache) = net.forward(x).map_err(|e| diverged(ctx, epoch, e))?;
                for (o, l) in logits.values_mut().iter_mut().zip(out.values()) {
                    *o += l;
                }
                caches.push(cache);
            }
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("{ctx}: training loss {loss} in epoch {epoch}")));
            }
            for (net, cache) in nets.iter_mut().zip(&caches) {
                let grads = net.backward(cache, &dlogits)?;
                net.sgd_step(&grads, settings.lr, settings.weight_decay)
                    .map_err(|e| diverged(ctx, epoch, e))?;
            }
        }
        let val = combiner.loss(&nets, validation).map_err(|e| diverged(ctx, epoch, e))?;
        if !val.is_finite() {
            return Err(Error::Diverged(format!("{ctx}: validation loss {val} after epoch {epoch}")));
        }
        if val < best_val {
            stale = 0;
            let eligible = match settings.train_loss_ceiling {
                Some(ceiling) => combiner.loss(&nets, train)? <= ceiling,
                None => true,
            };
            if eligible {
                best_val = val;
                best = nets.clone();
            }
        } else {
            stale += 1;
            if stale >= settings.patience {
                break;
            }
        }
    }
    Ok(best)
}

fn layer_sizes(input: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    sizes
}

fn stage1_settings<'a>(config: &TrainConfig, context: &'a str) -> FitSettings<'a> {
    FitSettings {
        lr: config.lr_stage1,
        weight_decay: config.weight_decay,
        epochs: config.epochs_stage1,
        batch_size: config.batch_size,
        patience: config.patience,
        train_loss_ceiling: None,
        context,
    }
}

/// Draws per-expert init and shuffle streams, in expert order.
fn expert_streams(rng: &mut RngStream, count: usize) -> Vec<(RngStream, RngStream)> {
    (0..count).map(|_| (rng.fork(), rng.fork())).collect()
}

/// Trains one expert alone on its view of `dataset`, returning the snapshot
/// with the lowest validation loss.
pub fn train_expert(
    role: ExpertRole,
    dataset: &Dataset,
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<Expert> {
    config.validate()?;
    let split = DataSplit::new(dataset.len(), config, &mut rng.fork())?;
    let mut streams = expert_streams(rng, 1);
    let (init_rng, shuffle_rng) = &mut streams[0];
    let featurizer = Featurizer::for_role(role, dataset.shapes());
    let train = Fold::new(&[featurizer], &gather(dataset.samples(), &split.train))?;
    let validation = Fold::new(&[featurizer], &gather(dataset.samples(), &split.validation))?;
    let sizes = layer_sizes(featurizer.output_dim(), config.hidden_for(role), dataset.num_classes());
    let net = Mlp::init(&sizes, init_rng)?;
    let zeros = vec![0.0; dataset.num_classes()];
    let combiner = Combiner {
        prior_logits: &zeros,
        prior_coefficient: 0.0,
    };
    let context = format!("{role} expert");
    let mut nets = fit(
        vec![net],
        &combiner,
        &train,
        &validation,
        &stage1_settings(config, &context),
        shuffle_rng,
    )?;
    Expert::new(role, featurizer, nets.remove(0))
}

/// Result of [`train_stack`]: the stage-1 experts, the final stack and the
/// data split both stages used.
#[derive(Debug, Clone)]
pub struct TrainedStack {
    /// Independently trained experts, all active. For the joint-from-scratch
    /// schedule these are the untrained initial networks.
    pub stage1: PredictorStack,
    pub stack: PredictorStack,
    pub split: DataSplit,
    /// Restriction of the stage-1 experts that fine-tuning started from.
    pub stage2_start: Option<Variant>,
}

/// Trains a modality-1, modality-2 and joint expert according to
/// `config.schedule`.
///
/// Fine-tuning starts from whichever of the stage-1 combinations i2m2, intra
/// and inter has the lowest validation loss, with the experts outside that
/// combination silenced (zero logits) but still trainable. With
/// `monotone_coverage` the start is picked by training loss instead and
/// snapshots whose training loss exceeds the starting one are never returned,
/// so the result never fits the training set worse than stage-1 intra or
/// inter.
pub fn train_stack(dataset: &Dataset, config: &TrainConfig, rng: &mut RngStream) -> Result<TrainedStack> {
    config.validate()?;
    let c = dataset.num_classes();
    let split = DataSplit::new(dataset.len(), config, &mut rng.fork())?;
    let mut streams = expert_streams(rng, ExpertRole::ALL.len());
    let mut stage2_rng = rng.fork();

    let featurizers: Vec<Featurizer> = ExpertRole::ALL
        .iter()
        .map(|&r| Featurizer::for_role(r, dataset.shapes()))
        .collect();
    let train_samples = gather(dataset.samples(), &split.train);
    let train = Fold::new(&featurizers, &train_samples)?;
    let validation = Fold::new(&featurizers, &gather(dataset.samples(), &split.validation))?;
    let prior_logits = empirical_prior_logits(&train.labels, c)?;
    let zeros = vec![0.0; c];
    let alone = Combiner {
        prior_logits: &zeros,
        prior_coefficient: 0.0,
    };

    let mut initial = Vec::with_capacity(3);
    for (i, &role) in ExpertRole::ALL.iter().enumerate() {
        let sizes = layer_sizes(featurizers[i].output_dim(), config.hidden_for(role), c);
        initial.push(Mlp::init(&sizes, &mut streams[i].0)?);
    }

    let mut stage1_nets = initial.clone();
    if config.schedule != Schedule::JointFromScratch {
        for (i, &role) in ExpertRole::ALL.iter().enumerate() {
            let context = format!("{role} expert");
            let single_train = Fold {
                features: vec![train.features[i].clone()],
                labels: train.labels.clone(),
            };
            let single_val = Fold {
                features: vec![validation.features[i].clone()],
                labels: validation.labels.clone(),
            };
            stage1_nets[i] = fit(
                vec![initial[i].clone()],
                &alone,
                &single_train,
                &single_val,
                &stage1_settings(config, &context),
                &mut streams[i].1,
            )?
            .remove(0);
        }
    }
    let build = |nets: Vec<Mlp>| -> Result<PredictorStack> {
        let experts = ExpertRole::ALL
            .iter()
            .zip(featurizers.iter())
            .zip(nets)
            .map(|((&role, &f), net)| Expert::new(role, f, net))
            .collect::<Result<Vec<_>>>()?;
        PredictorStack::new(experts, prior_logits.clone(), config.prior_coefficient)
    };
    let stage1 = build(stage1_nets.clone())?;

    let combiner = Combiner {
        prior_logits: &prior_logits,
        prior_coefficient: config.prior_coefficient,
    };
    let (nets, start) = match config.schedule {
        Schedule::PretrainOnly => (stage1_nets, None),
        Schedule::TwoStage if config.epochs_stage2 == 0 => (stage1_nets, None),
        Schedule::TwoStage => {
            let selection_fold = if config.monotone_coverage { &train } else { &validation };
            let mut best: Option<(f64, Variant, Vec<Mlp>)> = None;
            for variant in [Variant::I2m2, Variant::Intra, Variant::Inter] {
                let mut nets = stage1_nets.clone();
                for (net, role) in nets.iter_mut().zip(ExpertRole::ALL) {
                    if !variant.roles().contains(&role) {
                        net.silence();
                    }
                }
                let loss = combiner.loss(&nets, selection_fold)?;
                if best.as_ref().is_none_or(|(l, _, _)| loss < *l) {
                    best = Some((loss, variant, nets));
                }
            }
            let (start_loss, variant, nets) = best.expect("three candidates");
            let settings = FitSettings {
                lr: config.stage2_lr(),
                weight_decay: config.weight_decay,
                epochs: config.epochs_stage2,
                batch_size: config.batch_size,
                patience: config.patience,
                train_loss_ceiling: config.monotone_coverage.then_some(start_loss),
                context: "joint fine-tuning",
            };
            let tuned = fit(nets, &combiner, &train, &validation, &settings, &mut stage2_rng)?;
            (tuned, Some(variant))
        }
        Schedule::JointFromScratch => {
            let settings = FitSettings {
                lr: config.lr_stage1,
                weight_decay: config.weight_decay,
                epochs: config.epochs_stage1 + config.epochs_stage2,
                batch_size: config.batch_size,
                patience: config.patience,
                train_loss_ceiling: None,
                context: "joint training from scratch",
            };
            let trained = fit(initial, &combiner, &train, &validation, &settings, &mut stage2_rng)?;
            (trained, None)
        }
    };
    Ok(TrainedStack {
        stage1,
        stack: build(nets)?,
        split,
        stage2_start: start,
    })
}

/// The final stack of [`train_stack`].
pub fn two_stage_train(dataset: &Dataset, config: &TrainConfig, rng: &mut RngStream) -> Result<PredictorStack> {
    Ok(train_stack(dataset, config, rng)?.stack)
}

fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

/// Parameters of the three-expert stack `config` describes.
pub fn i2m2_parameter_count(dataset: &Dataset, config: &TrainConfig) -> usize {
    ExpertRole::ALL
        .iter()
        .map(|&r| {
            let input = Featurizer::for_role(r, dataset.shapes()).output_dim();
            parameter_count(&layer_sizes(input, config.hidden_for(r), dataset.num_classes()))
        })
        .sum()
}

/// Layer sizes for each member of `composition`. Members start from the
/// configured per-role architectures; if their total falls short of the
/// three-expert budget, the first hidden layers restart at width 1 and are
/// widened one unit at a time, round-robin, until the total reaches it.
/// Linear members get a hidden layer for this.
pub fn matched_architectures(
    dataset: &Dataset,
    config: &TrainConfig,
    composition: &[ExpertRole],
) -> Result<Vec<Vec<usize>>> {
    if composition.is_empty() {
        return Err(Error::invalid("ensemble composition is empty"));
    }
    let c = dataset.num_classes();
    let mut sizes: Vec<Vec<usize>> = composition
        .iter()
        .map(|&r| {
            let input = Featurizer::for_role(r, dataset.shapes()).output_dim();
            layer_sizes(input, config.hidden_for(r), c)
        })
        .collect();
    let total = |s: &[Vec<usize>]| s.iter().map(|l| parameter_count(l)).sum::<usize>();
    let target = i2m2_parameter_count(dataset, config);
    if total(&sizes) >= target {
        return Ok(sizes);
    }
    for s in sizes.iter_mut() {
        if s.len() == 2 {
            s.insert(1, 1);
        } else {
            s[1] = 1;
        }
    }
    let mut next = 0;
    while total(&sizes) < target {
        sizes[next][1] += 1;
        next = (next + 1) % sizes.len();
    }
    Ok(sizes)
}

/// Independently trained experts of the given roles, sized by
/// [`matched_architectures`] and combined by the same logit sum as the
/// three-expert stack. No joint fine-tuning.
pub fn build_param_matched_ensemble(
    dataset: &Dataset,
    config: &TrainConfig,
    composition: &[ExpertRole],
    rng: &mut RngStream,
) -> Result<PredictorStack> {
    config.validate()?;
    let architectures = matched_architectures(dataset, config, composition)?;
    let c = dataset.num_classes();
    let split = DataSplit::new(dataset.len(), config, &mut rng.fork())?;
    let mut streams = expert_streams(rng, composition.len());
    let train_samples = gather(dataset.samples(), &split.train);
    let val_samples = gather(dataset.samples(), &split.validation);
    let train_labels: Vec<usize> = train_samples.iter().map(|s| s.y).collect();
    let prior_logits = empirical_prior_logits(&train_labels, c)?;
    let zeros = vec![0.0; c];
    let alone = Combiner {
        prior_logits: &zeros,
        prior_coefficient: 0.0,
    };
    let mut experts = Vec::with_capacity(composition.len());
    for (i, (&role, sizes)) in composition.iter().zip(&architectures).enumerate() {
        let featurizer = Featurizer::for_role(role, dataset.shapes());
        let train = Fold::new(&[featurizer], &train_samples)?;
        let validation = Fold::new(&[featurizer], &val_samples)?;
        let (init_rng, shuffle_rng) = &mut streams[i];
        let net = Mlp::init(sizes, init_rng)?;
        let context = format!("ensemble member {i} ({role})");
        let net = fit(
            vec![net],
            &alone,
            &train,
            &validation,
            &stage1_settings(config, &context),
            shuffle_rng,
        )?
        .remove(0);
        experts.push(Expert::new(role, featurizer, net)?);
    }
    PredictorStack::new(experts, prior_logits, config.prior_coefficient)
}

/// Mean cross-entropy of the stack's predictions on `samples`.
pub fn mean_cross_entropy(stack: &PredictorStack, samples: &[Sample]) -> Result<f64> {
    let logits = stack.combine_batch(samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.y).collect();
    Ok(cross_entropy(&logits, &labels)?.0)
}
