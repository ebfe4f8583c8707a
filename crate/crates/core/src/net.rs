//! Feed-forward softmax classifier with Adam training, and the split into a
//! frozen feature extractor plus a retrainable linear head.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::{class_counts, Dataset};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `delta` by the derivative, given the activation output.
    fn backprop(self, delta: &mut Array2<f64>, activated: &Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(delta).and(activated).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(delta).and(activated).for_each(|d, &a| *d *= 1.0 - a * a),
        }
    }
}

/// Layer widths from input dimension to class count; hidden layers use
/// `activation`, the output is softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = NetworkSpec { layer_widths, activation };
        spec.validate()?;
        Ok(spec)
    }

    /// `[input, hidden..., n_classes]` with ReLU.
    pub fn mlp(input: usize, hidden: &[usize], n_classes: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(n_classes);
        NetworkSpec::new(widths, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("network needs at least input and output widths"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// One affine map; `weights` is `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut Stream) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || limit * (2.0 * rng.uniform() - 1.0));
        Layer { weights, bias: Array1::zeros(fan_out) }
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn zeros_like(&self) -> Self {
        Layer {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.n_layers() {
            return Err(Error::DimensionMismatch {
                expected: spec.n_layers(),
                got: self.layers.len(),
                context: "layer count",
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (i, o) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            if layer.weights.dim() != (i, o) || layer.bias.len() != o {
                return Err(Error::DimensionMismatch {
                    expected: i * o,
                    got: layer.weights.len(),
                    context: "layer shape",
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Adam with lr 1e-3, batch 128, 100 epochs.
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0) {
            return Err(Error::invalid("learning_rate and adam_epsilon must be positive"));
        }
        if !(in_unit(self.adam_beta1) && in_unit(self.adam_beta2)) {
            return Err(Error::invalid("adam betas must lie in (0, 1)"));
        }
        Ok(())
    }
}

pub fn init(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let mut rng = Stream::new(seed);
    let layers = spec
        .layer_widths
        .windows(2)
        .map(|w| Layer::glorot(w[0], w[1], &mut rng))
        .collect();
    Ok(NetworkParams { layers })
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn run_hidden(layers: &[Layer], activation: Activation, x: ArrayView2<f64>) -> Array2<f64> {
    let mut h = x.to_owned();
    for layer in layers {
        h = layer.affine(&h.view());
        activation.apply(&mut h);
    }
    h
}

fn check_input(spec: &NetworkSpec, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            got: x.ncols(),
            context: "input columns",
        });
    }
    Ok(())
}

/// Class probabilities, one row per input row.
pub fn forward(params: &NetworkParams, spec: &NetworkSpec, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    params.check(spec)?;
    check_input(spec, &batch)?;
    let (last, hidden) = params.layers.split_last().unwrap();
    let h = run_hidden(hidden, spec.activation, batch);
    let mut out = last.affine(&h.view());
    softmax_rows(&mut out);
    Ok(out)
}

pub fn predict(params: &NetworkParams, spec: &NetworkSpec, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(params, spec, batch)?))
}

pub(crate) fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// every parameter.
pub fn loss_and_gradients(
    params: &NetworkParams,
    spec: &NetworkSpec,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, NetworkParams)> {
    params.check(spec)?;
    check_input(spec, &x)?;
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
            context: "labels vs batch rows",
        });
    }
    let n_classes = spec.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::ClassOutOfRange { class: bad, n_classes });
    }
    Ok(backprop(params, spec.activation, x, labels))
}

fn backprop(params: &NetworkParams, activation: Activation, x: ArrayView2<f64>, labels: &[usize]) -> (f64, NetworkParams) {
    let n_layers = params.layers.len();
    let batch = x.nrows() as f64;

    // activations[l] is the input to layer l.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    activations.push(x.to_owned());
    for layer in &params.layers[..n_layers - 1] {
        let mut h = layer.affine(&activations.last().unwrap().view());
        activation.apply(&mut h);
        activations.push(h);
    }
    let mut logits = params.layers[n_layers - 1].affine(&activations[n_layers - 1].view());

    // Log-sum-exp stabilized cross-entropy.
    let mut loss = 0.0;
    for (mut row, &y) in logits.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        row.mapv_inplace(|v| (v - lse).exp());
        row[y] -= 1.0;
    }
    loss /= batch;
    let mut delta = logits / batch;

    let mut grads: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();
    for l in (0..n_layers).rev() {
        grads[l].weights = activations[l].t().dot(&delta);
        grads[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&params.layers[l].weights.t());
            activation.backprop(&mut prev, &activations[l]);
            delta = prev;
        }
    }
    (loss, NetworkParams { layers: grads })
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    fn new(params: &NetworkParams) -> Self {
        Adam {
            m: params.layers.iter().map(Layer::zeros_like).collect(),
            v: params.layers.iter().map(Layer::zeros_like).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_epsilon;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (l, layer) in params.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&mut self.m[l].weights)
                .and(&mut self.v[l].weights)
                .and(&grads.layers[l].weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut self.m[l].bias)
                .and(&mut self.v[l].bias)
                .and(&grads.layers[l].bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Minimizes mean cross-entropy with Adam over mini-batches. The sample order
/// is reshuffled each epoch from a stream keyed by `(cfg.seed, epoch)`.
pub fn train(params: &NetworkParams, spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<NetworkParams> {
    if data.n_classes() > spec.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_classes(),
            got: data.n_classes(),
            context: "dataset classes vs network outputs",
        });
    }
    train_on(params, spec, data.features().view(), data.labels(), cfg)
}

fn train_on(
    params: &NetworkParams,
    spec: &NetworkSpec,
    x: ArrayView2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<NetworkParams> {
    params.check(spec)?;
    check_input(spec, &x)?;
    cfg.validate()?;
    let mut params = params.clone();
    let mut adam = Adam::new(&params);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        Stream::keyed(cfg.seed, &[epoch as u64]).shuffle(&mut order);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let (loss, grads) = backprop(&params, spec.activation, xb.view(), &batch_labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut params, &grads, cfg);
        }
    }
    Ok(params)
}

/// Extractor (every layer but the last, each followed by the activation) and
/// the final linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitNetwork {
    pub input_dim: usize,
    pub activation: Activation,
    pub extractor: Vec<Layer>,
    pub head: Layer,
}

impl SplitNetwork {
    pub fn feature_dim(&self) -> usize {
        self.head.weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.head.weights.ncols()
    }

    /// Extractor output for a batch. With no hidden layers this is the input.
    pub fn features(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
                context: "input columns",
            });
        }
        Ok(run_hidden(&self.extractor, self.activation, x))
    }

    /// Head class probabilities for extracted features.
    pub fn head_probs(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: features.ncols(),
                context: "feature columns",
            });
        }
        let mut out = self.head.affine(&features);
        softmax_rows(&mut out);
        Ok(out)
    }

    fn head_spec(&self) -> NetworkSpec {
        NetworkSpec {
            layer_widths: vec![self.feature_dim(), self.n_classes()],
            activation: self.activation,
        }
    }
}

/// A single-layer network splits into an empty (identity) extractor.
pub fn split_at_penultimate(params: &NetworkParams, spec: &NetworkSpec) -> Result<SplitNetwork> {
    spec.validate()?;
    params.check(spec)?;
    let (head, extractor) = params.layers.split_last().unwrap();
    Ok(SplitNetwork {
        input_dim: spec.input_dim(),
        activation: spec.activation,
        extractor: extractor.to_vec(),
        head: head.clone(),
    })
}

pub fn reassemble(split: &SplitNetwork) -> Result<(NetworkParams, NetworkSpec)> {
    let mut widths = vec![split.input_dim];
    let mut prev = split.input_dim;
    for layer in split.extractor.iter().chain(std::iter::once(&split.head)) {
        let (i, o) = layer.weights.dim();
        if i != prev || layer.bias.len() != o {
            return Err(Error::DimensionMismatch {
                expected: prev,
                got: i,
                context: "consecutive layer widths",
            });
        }
        widths.push(o);
        prev = o;
    }
    let spec = NetworkSpec::new(widths, split.activation)?;
    let mut layers = split.extractor.clone();
    layers.push(split.head.clone());
    Ok((NetworkParams { layers }, spec))
}

/// Feature vectors grouped by class; `classes[c]` holds the rows of class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    classes: Vec<Array2<f64>>,
    feature_dim: usize,
}

impl FeatureSet {
    pub fn new(classes: Vec<Array2<f64>>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        for m in &classes {
            if m.ncols() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: m.ncols(),
                    context: "feature set columns",
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature set".into()));
            }
        }
        Ok(FeatureSet { classes, feature_dim })
    }

    pub fn empty(n_classes: usize, feature_dim: usize) -> Self {
        FeatureSet {
            classes: vec![Array2::zeros((0, feature_dim)); n_classes],
            feature_dim,
        }
    }

    /// Groups dataset rows by label, keeping their order.
    pub fn from_dataset(data: &Dataset) -> Self {
        let classes = (0..data.n_classes())
            .map(|c| data.features().select(Axis(0), &data.rows_of_class(c)))
            .collect();
        FeatureSet { classes, feature_dim: data.n_dims() }
    }

    pub fn class(&self, c: usize) -> &Array2<f64> {
        &self.classes[c]
    }

    pub fn classes(&self) -> &[Array2<f64>] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|m| m.nrows()).collect()
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|m| m.nrows()).sum()
    }

    /// Row-stacked matrix and matching labels, class by class.
    pub fn stacked(&self) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((self.total(), self.feature_dim));
        let mut labels = Vec::with_capacity(self.total());
        let mut at = 0;
        for (c, m) in self.classes.iter().enumerate() {
            x.slice_mut(s![at..at + m.nrows(), ..]).assign(m);
            labels.extend(std::iter::repeat_n(c, m.nrows()));
            at += m.nrows();
        }
        (x, labels)
    }

    /// Per-class concatenation: rows of `self` first, then rows of `other`.
    pub fn concat(&self, other: &FeatureSet) -> Result<FeatureSet> {
        if self.feature_dim != other.feature_dim || self.n_classes() != other.n_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: other.feature_dim,
                context: "feature set concatenation",
            });
        }
        let classes = self
            .classes
            .iter()
            .zip(&other.classes)
            .map(|(a, b)| ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("same width"))
            .collect();
        Ok(FeatureSet { classes, feature_dim: self.feature_dim })
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let (x, labels) = self.stacked();
        Dataset::new(x, labels, self.n_classes())
    }
}

pub fn extract_features(split: &SplitNetwork, data: &Dataset) -> Result<FeatureSet> {
    let feats = split.features(data.features().view())?;
    let classes = (0..data.n_classes())
        .map(|c| feats.select(Axis(0), &data.rows_of_class(c)))
        .collect();
    let fs = FeatureSet::new(classes, split.feature_dim())?;
    debug_assert_eq!(fs.counts(), class_counts(data));
    Ok(fs)
}

/// Trains a freshly initialized head (seeded from `cfg.seed`) on the union of
/// real and pseudo features. The extractor is copied untouched.
pub fn retrain_head(split: &SplitNetwork, real: &FeatureSet, pseudo: &FeatureSet, cfg: &TrainConfig) -> Result<SplitNetwork> {
    for fs in [real, pseudo] {
        if fs.feature_dim() != split.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: split.feature_dim(),
                got: fs.feature_dim(),
                context: "feature set vs head input",
            });
        }
        if fs.n_classes() > split.n_classes() {
            return Err(Error::DimensionMismatch {
                expected: split.n_classes(),
                got: fs.n_classes(),
                context: "feature classes vs head outputs",
            });
        }
    }
    let union = if pseudo.total() == 0 {
        real.clone()
    } else {
        real.concat(pseudo)?
    };
    if union.total() == 0 {
        return Err(Error::invalid("head retraining set is empty"));
    }
    let (x, labels) = union.stacked();
    let spec = split.head_spec();
    let fresh = init(&spec, cfg.seed)?;
    let trained = train_on(&fresh, &spec, x.view(), &labels, cfg)?;
    Ok(SplitNetwork {
        input_dim: split.input_dim,
        activation: split.activation,
        extractor: split.extractor.clone(),
        head: trained.layers.into_iter().next().unwrap(),
    })
}
