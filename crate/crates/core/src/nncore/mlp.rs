use super::matrix::RealMatrix;
use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// One affine map `out = weight · in + bias`. `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: RealMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dim(format!(
                "bias has {} entries for a layer with {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("layer bias".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, out_o) in out.iter_mut().enumerate() {
            let w = self.weight.row(o);
            *out_o = self.bias[o] + dot(w, input);
        }
    }
}

/// Dense feed-forward network: rectified-linear hidden layers, linear output
/// producing unnormalized class logits.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden_activation: Activation,
    // Bumped on every parameter mutation; ties forward caches to a state.
    revision: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.hidden_activation == other.hidden_activation
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dim(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self {
            layers,
            hidden_activation: Activation::Relu,
            revision: 0,
        })
    }

    /// He-style initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(layer_sizes: &[usize], rng: &mut RngStream) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid(format!(
                "layer sizes need at least input and output, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("zero-sized layer in {layer_sizes:?}")));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                let values = (0..fan_in * fan_out).map(|_| scale * rng.normal()).collect();
                Layer {
                    weight: RealMatrix::from_raw(fan_out, fan_in, values),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.values().len() + l.bias.len())
            .sum()
    }

    /// Zeroes the output layer so the network emits constant-zero logits.
    pub fn silence(&mut self) {
        let last = self.layers.len() - 1;
        self.layers[last].weight.values_mut().fill(0.0);
        self.layers[last].bias.fill(0.0);
        self.revision += 1;
    }

    /// Logits for a single input vector.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_size() {
            return Err(Error::dim(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_size()
            )));
        }
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs()];
            layer.apply(&current, &mut next);
            if i < last {
                relu_in_place(&mut next);
            }
            current = next;
        }
        Ok(current)
    }

    pub fn forward(&self, batch: &RealMatrix) -> Result<(RealMatrix, ForwardCache)> {
        if batch.cols() != self.input_size() {
            return Err(Error::dim(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_size()
            )));
        }
        let n = batch.rows();
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut current = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = RealMatrix::from_raw(n, layer.outputs(), vec![0.0; n * layer.outputs()]);
            for b in 0..n {
                layer.apply(current.row(b), next.row_mut(b));
            }
            activations.push(current);
            if i < last {
                pre_activations.push(next.clone());
                relu_in_place(next.values_mut());
            }
            current = next;
        }
        if !current.is_finite() {
            return Err(Error::NonFinite("forward pass produced non-finite logits".into()));
        }
        let cache = ForwardCache {
            activations,
            pre_activations,
            layer_sizes: self.layer_sizes(),
            revision: self.revision,
        };
        Ok((current, cache))
    }

    /// Exact gradients of the loss whose logit-gradient is `dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &RealMatrix) -> Result<GradientSet> {
        if cache.layer_sizes != self.layer_sizes() {
            return Err(Error::dim(format!(
                "cache was built for layers {:?}, network has {:?}",
                cache.layer_sizes,
                self.layer_sizes()
            )));
        }
        if cache.revision != self.revision {
            return Err(Error::invalid(
                "stale forward cache: parameters changed since the forward pass",
            ));
        }
        let n = cache.activations[0].rows();
        if dlogits.shape() != (n, self.output_size()) {
            return Err(Error::dim(format!(
                "dlogits is {:?}, expected ({n}, {})",
                dlogits.shape(),
                self.output_size()
            )));
        }

        let mut grads: Vec<LayerGradient> = self
            .layers
            .iter()
            .map(|l| LayerGradient::zeros(l.outputs(), l.inputs()))
            .collect();
        let mut delta = dlogits.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let (outs, ins) = (layer.outputs(), layer.inputs());
            let g = &mut grads[li];
            for b in 0..n {
                let d = delta.row(b);
                let a = input.row(b);
                for o in 0..outs {
                    let d_o = d[o];
                    if d_o == 0.0 {
                        continue;
                    }
                    g.bias[o] += d_o;
                    let w_row = &mut g.weight[o * ins..(o + 1) * ins];
                    for (w, &a_i) in w_row.iter_mut().zip(a) {
                        *w += d_o * a_i;
                    }
                }
            }
            if li == 0 {
                break;
            }
            // Propagate through the weights, then through the ReLU of the
            // previous layer (its output is this layer's input).
            let pre = &cache.pre_activations[li - 1];
            let mut prev = RealMatrix::from_raw(n, ins, vec![0.0; n * ins]);
            for b in 0..n {
                let d = delta.row(b);
                let z = pre.row(b);
                let p = prev.row_mut(b);
                for (o, &d_o) in d.iter().enumerate() {
                    if d_o == 0.0 {
                        continue;
                    }
                    for (p_i, &w) in p.iter_mut().zip(layer.weight.row(o)) {
                        *p_i += d_o * w;
                    }
                }
                for (p_i, &z_i) in p.iter_mut().zip(z) {
                    *p_i *= relu_derivative(z_i);
                }
            }
            delta = prev;
        }
        Ok(GradientSet { layers: grads })
    }

    /// `w ← w − lr·(g + weight_decay·w)`; biases take no decay.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64, weight_decay: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if !grads.matches(self) {
            return Err(Error::dim("gradient shapes do not match the network"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in layer.weight.values_mut().iter_mut().zip(&g.weight) {
                *w -= lr * (gw + weight_decay * *w);
            }
            for (b, &gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        self.revision += 1;
        Ok(())
    }

    /// Visits every scalar parameter mutably, weights before biases, layer by layer.
    #[cfg(test)]
    pub(crate) fn for_each_parameter_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            layer.weight.values_mut().iter_mut().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
        }
        self.revision += 1;
    }
}

/// Per-layer inputs recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<RealMatrix>,
    pre_activations: Vec<RealMatrix>,
    layer_sizes: Vec<usize>,
    revision: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    /// Row-major, `out × in`, matching the layer's weight.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGradient {
    fn zeros(outs: usize, ins: usize) -> Self {
        Self {
            weight: vec![0.0; outs * ins],
            bias: vec![0.0; outs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn matches(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self.layers.iter().zip(&mlp.layers).all(|(g, l)| {
                g.weight.len() == l.weight.values().len() && g.bias.len() == l.bias.len()
            })
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Flattened in the same order as the network's parameters.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Subgradient 1/2 at the kink, the value a central difference sees there.
fn relu_derivative(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z == 0.0 {
        0.5
    } else {
        0.0
    }
}

fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax(logits: &RealMatrix) -> RealMatrix {
    let mut out = Vec::with_capacity(logits.values().len());
    for row in logits.iter_rows() {
        out.extend(softmax_row(row));
    }
    RealMatrix::from_raw(logits.rows(), logits.cols(), out)
}

pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `labels` and its gradient w.r.t. the logits,
/// `(softmax − onehot) / B`.
pub fn cross_entropy(logits: &RealMatrix, labels: &[usize]) -> Result<(f64, RealMatrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &y) in logits.iter_rows().zip(labels) {
        let lse = log_sum_exp(row);
        loss += lse - row[y];
        for (k, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let target = if k == y { 1.0 } else { 0.0 };
            grad.push((p - target) * scale);
        }
    }
    Ok((loss * scale, RealMatrix::from_raw(n, c, grad)))
}

/// Maximum relative error between analytic and central-difference gradients
/// of the mean cross-entropy, over every parameter.
///
/// The perturbed forward passes run in double-double arithmetic, so the logit
/// shift caused by `±eps` is resolved exactly and the loss difference is
/// formed from it directly instead of subtracting two rounded losses.
pub fn gradcheck(mlp: &Mlp, batch: &RealMatrix, labels: &[usize], eps: f64) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::invalid(format!("eps must lie in [1e-8, 1e-4], got {eps}")));
    }
    let (logits, cache) = mlp.forward(batch)?;
    let (_, dlogits) = cross_entropy(&logits, labels)?;
    let analytic: Vec<f64> = mlp.backward(&cache, &dlogits)?.iter().collect();

    let n = batch.rows();
    let mut worst = 0.0f64;
    for (index, &a) in analytic.iter().enumerate() {
        let target = locate(mlp, index);
        let mut delta_loss = 0.0;
        for b in 0..n {
            let plus = dd::forward(mlp, batch.row(b), target, eps);
            let minus = dd::forward(mlp, batch.row(b), target, -eps);
            let base: Vec<f64> = minus.iter().map(|z| z.hi).collect();
            let q = softmax_row(&base);
            let shifts: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| p.sub(*m).hi).collect();
            let mixed: f64 = q.iter().zip(&shifts).map(|(q, d)| q * d.exp_m1()).sum();
            delta_loss += mixed.ln_1p() - shifts[labels[b]];
        }
        let numeric = delta_loss / n as f64 / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

mod dd {
    //! Just enough double-double arithmetic for perturbed forward passes.

    use super::Mlp;

    #[derive(Debug, Clone, Copy)]
    pub(super) struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    impl Dd {
        fn from(x: f64) -> Self {
            Dd { hi: x, lo: 0.0 }
        }

        fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            let (t, f) = two_sum(self.lo, o.lo);
            let r = quick_two_sum(s, e + t);
            quick_two_sum(r.hi, r.lo + f)
        }

        pub(super) fn sub(self, o: Dd) -> Dd {
            self.add(Dd { hi: -o.hi, lo: -o.lo })
        }

        fn mul(self, o: Dd) -> Dd {
            let p = self.hi * o.hi;
            let e = self.hi.mul_add(o.hi, -p);
            quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
        }

        fn is_positive(self) -> bool {
            self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
        }
    }

    /// Logits for one input with parameter `target` shifted by `shift`.
    pub(super) fn forward(
        mlp: &Mlp,
        input: &[f64],
        target: (usize, bool, usize),
        shift: f64,
    ) -> Vec<Dd> {
        let (t_layer, t_is_weight, t_index) = target;
        let mut current: Vec<Dd> = input.iter().copied().map(Dd::from).collect();
        let last = mlp.layers.len() - 1;
        for (li, layer) in mlp.layers.iter().enumerate() {
            let ins = layer.inputs();
            let mut next = Vec::with_capacity(layer.outputs());
            for o in 0..layer.outputs() {
                let mut bias = Dd::from(layer.bias[o]);
                if li == t_layer && !t_is_weight && t_index == o {
                    bias.lo = shift;
                    bias = quick_two_sum(bias.hi, bias.lo);
                }
                let mut acc = bias;
                for (i, &w) in layer.weight.row(o).iter().enumerate() {
                    let mut w = Dd::from(w);
                    if li == t_layer && t_is_weight && t_index == o * ins + i {
                        w = quick_two_sum(w.hi, shift);
                    }
                    acc = acc.add(w.mul(current[i]));
                }
                if li < last && !acc.is_positive() {
                    acc = Dd::from(0.0);
                }
                next.push(acc);
            }
            current = next;
        }
        current
    }
}

fn locate(mlp: &Mlp, mut index: usize) -> (usize, bool, usize) {
    for (li, layer) in mlp.layers.iter().enumerate() {
        let nw = layer.weight.values().len();
        if index < nw {
            return (li, true, index);
        }
        index -= nw;
        if index < layer.bias.len() {
            return (li, false, index);
        }
        index -= layer.bias.len();
    }
    panic!("parameter index out of range");
}
