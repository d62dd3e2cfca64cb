//! A small feed-forward network with hand-written reverse mode.
//!
//! The model has three parts that share one parameter container:
//!
//! * a featurizer: `dense → per-sample standardization → ReLU` blocks,
//! * a classification head: dense layers with ReLU between, linear logits,
//! * an optional domain head with the same shape rules (used by DANN).
//!
//! Per-sample standardization normalizes each row across its hidden units,
//! so no statistic is shared between samples of a batch.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance floor of the per-sample standardization.
pub const NORM_VARIANCE_FLOOR: f64 = 1e-5;

const DOMAIN_HEAD_STREAM: u64 = 0x646f_6d61_696e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Output widths of the featurizer blocks; the last one is the feature width.
    pub featurizer_widths: Vec<usize>,
    /// Hidden widths of the classification head (empty for a single linear layer).
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Hidden widths of the domain head; `None` builds no domain head.
    pub domain_hidden: Option<Vec<usize>>,
}

impl Architecture {
    /// `d → 64 → 64 → 32` featurizer with a linear two-class head.
    pub fn default_for(input_dim: usize) -> Self {
        Self {
            input_dim,
            featurizer_widths: vec![64, 64, 32],
            classifier_hidden: vec![],
            num_classes: 2,
            domain_hidden: None,
        }
    }

    pub fn with_domain_head(mut self, hidden: Vec<usize>) -> Self {
        self.domain_hidden = Some(hidden);
        self
    }

    pub fn feature_dim(&self) -> usize {
        *self.featurizer_widths.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 || self.featurizer_widths.is_empty() {
            return Err(Error::Config(
                "architecture needs input_dim >= 1, >= 1 featurizer block and >= 2 classes"
                    .into(),
            ));
        }
        let widths = self
            .featurizer_widths
            .iter()
            .chain(&self.classifier_hidden)
            .chain(self.domain_hidden.iter().flatten());
        if widths.clone().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Uniform `±sqrt(3 / fan_in)` weights (unit output variance for unit
    /// input variance), zero bias.
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (3.0 / fan_in as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }
}

/// The three layer groups of the model. Also used for gradients and
/// momentum buffers, which are shape-identical to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub featurizer: Vec<Dense>,
    pub classifier: Vec<Dense>,
    pub domain_head: Option<Vec<Dense>>,
}

impl Network {
    pub fn zeros_like(other: &Network) -> Self {
        let z = |layers: &Vec<Dense>| {
            layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect::<Vec<_>>()
        };
        Self {
            featurizer: z(&other.featurizer),
            classifier: z(&other.classifier),
            domain_head: other.domain_head.as_ref().map(z),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.featurizer
            .iter()
            .chain(&self.classifier)
            .chain(self.domain_head.iter().flatten())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.featurizer
            .iter_mut()
            .chain(self.classifier.iter_mut())
            .chain(self.domain_head.iter_mut().flatten())
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        let groups = |n: &Network| {
            (
                n.featurizer.len(),
                n.classifier.len(),
                n.domain_head.as_ref().map(Vec::len),
            )
        };
        groups(self) == groups(other)
            && self.layers().zip(other.layers()).all(|(a, b)| a.same_shape(b))
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Network, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Contract("gradient shapes differ".into()));
        }
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat view of every parameter in layer order (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in self.layers() {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Mutable reference to the `index`-th parameter in [`Network::flatten`] order.
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in self.layers_mut() {
            let nw = l.weights.len();
            if index < nw {
                return l.weights.iter_mut().nth(index);
            }
            index -= nw;
            if index < l.bias.len() {
                return l.bias.get_mut(index);
            }
            index -= l.bias.len();
        }
        None
    }
}

/// Model weights plus SGD momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub net: Network,
    pub momentum: Network,
    /// Incremented by every optimizer step; traces remember it.
    pub version: u64,
}

impl ModelParams {
    /// Seeded initialization. The domain head draws from its own stream so
    /// adding it does not change the featurizer or classifier weights.
    pub fn init(architecture: &Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = architecture.input_dim;
        let mut featurizer = Vec::new();
        for &w in &architecture.featurizer_widths {
            featurizer.push(Dense::init(fan_in, w, &mut rng));
            fan_in = w;
        }
        let feature_dim = fan_in;
        let head = |hidden: &[usize], out: usize, rng: &mut ChaCha8Rng| {
            let mut fan_in = feature_dim;
            let mut layers = Vec::new();
            for &w in hidden.iter().chain(std::iter::once(&out)) {
                layers.push(Dense::init(fan_in, w, rng));
                fan_in = w;
            }
            layers
        };
        let classifier = head(&architecture.classifier_hidden, architecture.num_classes, &mut rng);
        let domain_head = architecture.domain_hidden.as_ref().map(|hidden| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(DOMAIN_HEAD_STREAM);
            head(hidden, 1, &mut rng)
        });
        let net = Network {
            featurizer,
            classifier,
            domain_head,
        };
        Ok(Self {
            architecture: architecture.clone(),
            momentum: Network::zeros_like(&net),
            net,
            version: 0,
        })
    }

    pub fn from_network(architecture: Architecture, net: Network) -> Result<Self> {
        let expected = ModelParams::init(&architecture, 0)?;
        if !expected.net.same_shape(&net) {
            return Err(Error::Contract(
                "layer shapes do not match the architecture".into(),
            ));
        }
        Ok(Self {
            architecture,
            momentum: Network::zeros_like(&net),
            net,
            version: 0,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.architecture.feature_dim()
    }
}

#[derive(Debug, Clone)]
struct BlockTrace {
    input: Array2<f64>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    floored: Vec<bool>,
}

/// Intermediate values of a dense stack with ReLU between layers.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// Values kept from a forward pass for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    blocks: Vec<BlockTrace>,
    features: Array2<f64>,
    classifier: Option<(HeadTrace, Array2<f64>)>,
    version: u64,
}

impl ForwardTrace {
    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    /// Logits, when the trace came from [`forward`].
    pub fn logits(&self) -> Option<ArrayView2<'_, f64>> {
        self.classifier.as_ref().map(|(_, l)| l.view())
    }

    pub fn batch_size(&self) -> usize {
        self.features.nrows()
    }

    pub fn layer_count(&self) -> usize {
        self.blocks.len() + self.classifier.as_ref().map_or(0, |(h, _)| h.inputs.len())
    }
}

/// Standardizes every row to zero mean and unit variance, flooring the
/// variance at [`NORM_VARIANCE_FLOOR`]. Returns `(ŷ, 1/σ, floored)`.
fn standardize_rows(h: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Vec<bool>) {
    let width = h.ncols() as f64;
    let mut out = h.clone();
    let mut inv_std = Array1::zeros(h.nrows());
    let mut floored = vec![false; h.nrows()];
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let mean = row.sum() / width;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / width;
        floored[i] = var < NORM_VARIANCE_FLOOR;
        let s = 1.0 / var.max(NORM_VARIANCE_FLOOR).sqrt();
        row.mapv_inplace(|v| v * s);
        inv_std[i] = s;
    }
    (out, inv_std, floored)
}

fn check_input(width: usize, x: ArrayView2<f64>, what: &str) -> Result<()> {
    if x.ncols() != width {
        return Err(Error::Contract(format!(
            "{what} expects width {width}, got {}",
            x.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Contract(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Featurizer forward pass.
pub fn forward_features(
    params: &ModelParams,
    inputs: ArrayView2<f64>,
) -> Result<(Array2<f64>, ForwardTrace)> {
    check_input(params.architecture.input_dim, inputs, "featurizer")?;
    let mut x = inputs.to_owned();
    let mut blocks = Vec::with_capacity(params.net.featurizer.len());
    for layer in &params.net.featurizer {
        let h = layer.apply(x.view());
        let (normalized, inv_std, floored) = standardize_rows(&h);
        let out = normalized.mapv(|v| v.max(0.0));
        blocks.push(BlockTrace {
            input: x,
            normalized,
            inv_std,
            floored,
        });
        x = out;
    }
    let trace = ForwardTrace {
        blocks,
        features: x.clone(),
        classifier: None,
        version: params.version,
    };
    Ok((x, trace))
}

/// Dense stack with ReLU between layers and a linear last layer.
pub fn forward_head(layers: &[Dense], x: ArrayView2<f64>) -> Result<(Array2<f64>, HeadTrace)> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Contract("empty head".into()))?;
    check_input(first.fan_in(), x, "head")?;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre_activations = Vec::with_capacity(layers.len());
    let mut cur = x.to_owned();
    for (k, layer) in layers.iter().enumerate() {
        let z = layer.apply(cur.view());
        let next = if k + 1 < layers.len() {
            z.mapv(|v| v.max(0.0))
        } else {
            z.clone()
        };
        inputs.push(cur);
        pre_activations.push(z);
        cur = next;
    }
    Ok((
        cur,
        HeadTrace {
            inputs,
            pre_activations,
        },
    ))
}

/// Backward through a head: returns layer gradients and the input gradient.
pub fn backward_head(
    layers: &[Dense],
    trace: &HeadTrace,
    upstream: ArrayView2<f64>,
) -> Result<(Vec<Dense>, Array2<f64>)> {
    if trace.inputs.len() != layers.len() {
        return Err(Error::Contract("head trace does not match layers".into()));
    }
    let last = trace.pre_activations.last().expect("non-empty trace");
    if upstream.dim() != last.dim() {
        return Err(Error::Contract(format!(
            "upstream gradient {:?} does not match head output {:?}",
            upstream.dim(),
            last.dim()
        )));
    }
    let mut grads: Vec<Dense> = Vec::with_capacity(layers.len());
    let mut delta = upstream.to_owned();
    for k in (0..layers.len()).rev() {
        if k + 1 < layers.len() {
            delta.zip_mut_with(&trace.pre_activations[k], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let input = &trace.inputs[k];
        if input.ncols() != layers[k].fan_in() {
            return Err(Error::Contract("head trace does not match layers".into()));
        }
        grads.push(Dense {
            weights: input.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        delta = delta.dot(&layers[k].weights.t());
    }
    grads.reverse();
    Ok((grads, delta))
}

/// Classification logits for a batch of features.
pub fn forward_classifier(params: &ModelParams, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    forward_head(&params.net.classifier, features).map(|(logits, _)| logits)
}

/// Featurizer and classifier forward pass, keeping everything [`backward`] needs.
pub fn forward(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<ForwardTrace> {
    let (features, mut trace) = forward_features(params, inputs)?;
    let (logits, head) = forward_head(&params.net.classifier, features.view())?;
    trace.classifier = Some((head, logits));
    Ok(trace)
}

/// Gradients of the featurizer given the gradient at its output.
fn backward_featurizer(
    params: &ModelParams,
    trace: &ForwardTrace,
    feature_grads: Array2<f64>,
) -> Result<(Vec<Dense>, Array2<f64>)> {
    let mut grads = Vec::with_capacity(trace.blocks.len());
    let mut delta = feature_grads;
    for (layer, block) in params.net.featurizer.iter().zip(&trace.blocks).rev() {
        // through ReLU
        delta.zip_mut_with(&block.normalized, |d, &y| {
            if y <= 0.0 {
                *d = 0.0
            }
        });
        // through the row standardization
        let width = delta.ncols() as f64;
        for (i, mut row) in delta.outer_iter_mut().enumerate() {
            let y = block.normalized.row(i);
            let mean_d = row.sum() / width;
            let s = block.inv_std[i];
            if block.floored[i] {
                row.mapv_inplace(|d| s * (d - mean_d));
            } else {
                let mean_dy = row.iter().zip(y.iter()).map(|(d, y)| d * y).sum::<f64>() / width;
                row.iter_mut()
                    .zip(y.iter())
                    .for_each(|(d, y)| *d = s * (*d - mean_d - y * mean_dy));
            }
        }
        grads.push(Dense {
            weights: block.input.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        delta = delta.dot(&layer.weights.t());
    }
    grads.reverse();
    Ok((grads, delta))
}

/// Parameter gradients of a scalar loss from its gradients with respect to
/// the features and/or the logits of `trace`. Both terms are summed. The
/// domain head, if any, receives zero gradient.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    feature_grads: Option<ArrayView2<f64>>,
    logit_grads: Option<ArrayView2<f64>>,
) -> Result<Network> {
    if trace.version != params.version || trace.blocks.len() != params.net.featurizer.len() {
        return Err(Error::Contract(
            "trace was not produced by these parameters".into(),
        ));
    }
    let n = trace.batch_size();
    let mut out = Network::zeros_like(&params.net);
    let mut delta = match feature_grads {
        Some(g) if g.dim() != trace.features.dim() => {
            return Err(Error::Contract(format!(
                "feature gradient {:?} does not match features {:?}",
                g.dim(),
                trace.features.dim()
            )))
        }
        Some(g) => g.to_owned(),
        None => Array2::zeros((n, params.feature_dim())),
    };
    if let Some(g) = logit_grads {
        let (head_trace, _) = trace.classifier.as_ref().ok_or_else(|| {
            Error::Contract("logit gradients need a trace from `forward`".into())
        })?;
        let (head_grads, d_features) = backward_head(&params.net.classifier, head_trace, g)?;
        out.classifier = head_grads;
        delta += &d_features;
    }
    let (feat_grads, _) = backward_featurizer(params, trace, delta)?;
    out.featurizer = feat_grads;
    Ok(out)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n || n == 0 {
        return Err(Error::Contract(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
    }
    let mut grads = Array2::zeros((n, k));
    let mut loss = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[labels[i]];
        for j in 0..k {
            let p = (row[j] - log_z).exp();
            grads[[i, j]] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grads))
}

/// Mean binary cross-entropy on single-column logits, with its logit gradient.
pub fn binary_cross_entropy(logits: ArrayView2<f64>, targets: ArrayView1<f64>) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if logits.ncols() != 1 || targets.len() != n || n == 0 {
        return Err(Error::Contract(format!(
            "binary cross-entropy needs n x 1 logits and n targets, got {:?} and {}",
            logits.dim(),
            targets.len()
        )));
    }
    let mut grads = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let z = logits[[i, 0]];
        let y = targets[i];
        // log(1 + e^z) − y·z, evaluated stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        grads[[i, 0]] = (sigmoid(z) - y) / n as f64;
    }
    Ok((loss / n as f64, grads))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 coefficient, applied to weights but not biases.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One SGD step with heavy-ball momentum:
/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`.
pub fn sgd_step(params: &mut ModelParams, grads: &Network, config: &OptimizerConfig) -> Result<()> {
    config.validate()?;
    if !params.net.same_shape(grads) {
        return Err(Error::Contract(
            "gradients are not shape-parallel to the parameters".into(),
        ));
    }
    let (lr, mu, wd) = (config.learning_rate, config.momentum, config.weight_decay);
    let layers = params
        .net
        .layers_mut()
        .zip(params.momentum.layers_mut())
        .zip(grads.layers());
    for ((theta, vel), g) in layers {
        ndarray::Zip::from(&mut theta.weights)
            .and(&mut vel.weights)
            .and(&g.weights)
            .for_each(|t, v, &g| {
                *v = mu * *v + (g + wd * *t);
                *t -= lr * *v;
            });
        ndarray::Zip::from(&mut theta.bias)
            .and(&mut vel.bias)
            .and(&g.bias)
            .for_each(|t, v, &g| {
                *v = mu * *v + g;
                *t -= lr * *v;
            });
    }
    params.version += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_FORMAT: &str = "otda-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// `rows × cols`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: Architecture,
    featurizer: Vec<LayerRecord>,
    classifier: Vec<LayerRecord>,
    domain_head: Option<Vec<LayerRecord>>,
}

fn to_records(layers: &[Dense]) -> Vec<LayerRecord> {
    layers
        .iter()
        .map(|l| LayerRecord {
            rows: l.fan_in(),
            cols: l.fan_out(),
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn from_records(records: Vec<LayerRecord>) -> Result<Vec<Dense>> {
    records
        .into_iter()
        .map(|r| {
            if r.bias.len() != r.cols {
                return Err(Error::Contract("checkpoint bias length mismatch".into()));
            }
            let weights = Array2::from_shape_vec((r.rows, r.cols), r.weights)
                .map_err(|e| Error::Contract(format!("checkpoint weights: {e}")))?;
            Ok(Dense {
                weights,
                bias: Array1::from(r.bias),
            })
        })
        .collect()
}

/// Serializes the weights (not the momentum buffers) as a JSON checkpoint.
pub fn checkpoint_json(params: &ModelParams) -> Result<String> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: params.architecture.clone(),
        featurizer: to_records(&params.net.featurizer),
        classifier: to_records(&params.net.classifier),
        domain_head: params.net.domain_head.as_deref().map(to_records),
    };
    Ok(serde_json::to_string_pretty(&ck)?)
}

pub fn checkpoint_from_json(text: &str) -> Result<ModelParams> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Contract(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    let net = Network {
        featurizer: from_records(ck.featurizer)?,
        classifier: from_records(ck.classifier)?,
        domain_head: ck.domain_head.map(from_records).transpose()?,
    };
    ModelParams::from_network(ck.architecture, net)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_json(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}
