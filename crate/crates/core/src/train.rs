//! Training harness for ERM, OT-regularized and DANN models.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_domains, DomainDataset, Split, SplitData};
use crate::error::{Error, Result};
use crate::eval::{self, SubclusterCell};
use crate::nn::{
    self, backward, backward_head, binary_cross_entropy, cross_entropy, forward, forward_features,
    forward_head, sgd_step, Architecture, ModelParams, Network, OptimizerConfig,
};
use crate::ot::{ot_value_and_point_grads, Metric, SinkhornConfig};

const SHUFFLE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    Ot,
    Dann,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Ot => "ot",
            Method::Dann => "dann",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "ot" => Ok(Method::Ot),
            "dann" => Ok(Method::Dann),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected erm, ot or dann)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Layer widths of the model; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub featurizer_widths: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    /// Hidden widths of the DANN domain head.
    pub domain_hidden: Vec<usize>,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            featurizer_widths: vec![64, 64, 32],
            classifier_hidden: vec![],
            domain_hidden: vec![32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    /// OT weight, or the adversary weight λ for DANN.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub sinkhorn: SinkhornConfig,
    pub metric: Metric,
    pub seed: u64,
    pub early_stopping: bool,
    pub model: ModelShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            alpha: 0.0,
            epochs: 5,
            batch_size: 128,
            optimizer: OptimizerConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            metric: Metric::Euclidean,
            seed: 0,
            early_stopping: true,
            model: ModelShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        self.optimizer.validate()?;
        self.sinkhorn.validate()
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        let arch = Architecture {
            input_dim,
            featurizer_widths: self.model.featurizer_widths.clone(),
            classifier_hidden: self.model.classifier_hidden.clone(),
            num_classes: crate::data::NUM_CLASSES,
            domain_hidden: None,
        };
        match self.method {
            Method::Dann => arch.with_domain_head(self.model.domain_hidden.clone()),
            _ => arch,
        }
    }

    /// `{method}_a{alpha}_s{seed}`, used in file names.
    pub fn run_id(&self) -> String {
        format!("{}_a{}_s{}", self.method, format_alpha(self.alpha), self.seed)
    }
}

/// Shortest decimal form of α, as used in file names and table headers.
pub fn format_alpha(alpha: f64) -> String {
    let plain = format!("{alpha}");
    let sci = format!("{alpha:e}");
    if sci.len() < plain.len() {
        sci
    } else {
        plain
    }
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub ce: f64,
    /// OT value (method ot) or domain BCE (method dann); 0 for ERM.
    pub domain: f64,
}

/// Gradients of `L_CE + α·L_OT` on one source/target batch pair.
///
/// For ERM, or whenever α = 0, the OT term contributes no gradient. The OT
/// value is still computed for method `ot` so the epoch log carries it.
pub fn composite_gradients(
    params: &ModelParams,
    source: ArrayView2<f64>,
    labels: &[usize],
    target: Option<ArrayView2<f64>>,
    config: &TrainConfig,
) -> Result<(Network, StepLosses)> {
    let trace = forward(params, source)?;
    let (ce, logit_grads) = cross_entropy(trace.logits().expect("full forward"), labels)?;
    if config.method != Method::Ot {
        let grads = backward(params, &trace, None, Some(logit_grads.view()))?;
        return Ok((grads, StepLosses { ce, domain: 0.0 }));
    }
    let target = target.ok_or_else(|| Error::Contract("method ot needs a target batch".into()))?;
    if target.nrows() != source.nrows() {
        return Err(Error::Contract(format!(
            "target batch has {} rows, source batch {}",
            target.nrows(),
            source.nrows()
        )));
    }
    let (target_features, target_trace) = forward_features(params, target)?;
    let ot = ot_value_and_point_grads(
        trace.features(),
        target_features.view(),
        &config.sinkhorn,
        config.metric,
    )?;
    let losses = StepLosses {
        ce,
        domain: ot.value,
    };
    if config.alpha == 0.0 {
        let grads = backward(params, &trace, None, Some(logit_grads.view()))?;
        return Ok((grads, losses));
    }
    let source_feature_grads = ot.source_grads * config.alpha;
    let target_feature_grads = ot.target_grads * config.alpha;
    let mut grads = backward(
        params,
        &trace,
        Some(source_feature_grads.view()),
        Some(logit_grads.view()),
    )?;
    let target_grads = backward(params, &target_trace, Some(target_feature_grads.view()), None)?;
    grads.add_scaled(&target_grads, 1.0)?;
    Ok((grads, losses))
}

/// One SGD step on the composite loss.
pub fn composite_loss_step(
    params: &mut ModelParams,
    source: ArrayView2<f64>,
    labels: &[usize],
    target: Option<ArrayView2<f64>>,
    config: &TrainConfig,
) -> Result<StepLosses> {
    let (grads, losses) = composite_gradients(params, source, labels, target, config)?;
    sgd_step(params, &grads, &config.optimizer)?;
    Ok(losses)
}

/// Gradients of one DANN step.
///
/// The domain head minimizes the binary cross-entropy of telling source rows
/// (label 0) from target rows (label 1). The featurizer receives `−α` times
/// the adversary's feature gradient on top of the task gradient.
pub fn dann_gradients(
    params: &ModelParams,
    source: ArrayView2<f64>,
    labels: &[usize],
    target: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<(Network, StepLosses)> {
    let head = params
        .net
        .domain_head
        .as_ref()
        .ok_or_else(|| Error::Contract("DANN needs a model with a domain head".into()))?;
    let trace = forward(params, source)?;
    let (ce, logit_grads) = cross_entropy(trace.logits().expect("full forward"), labels)?;
    let (target_features, target_trace) = forward_features(params, target)?;

    let (ns, nt) = (source.nrows(), target.nrows());
    let both = concatenate(Axis(0), &[trace.features(), target_features.view()])
        .map_err(|e| Error::Contract(e.to_string()))?;
    let (domain_logits, head_trace) = forward_head(head, both.view())?;
    let domain_targets: Array1<f64> = (0..ns + nt).map(|i| if i < ns { 0.0 } else { 1.0 }).collect();
    let (domain_loss, domain_logit_grads) =
        binary_cross_entropy(domain_logits.view(), domain_targets.view())?;
    let (head_grads, feature_grads) = backward_head(head, &head_trace, domain_logit_grads.view())?;

    let mut grads = if config.alpha == 0.0 {
        backward(params, &trace, None, Some(logit_grads.view()))?
    } else {
        let reversed = feature_grads * -config.alpha;
        let mut g = backward(
            params,
            &trace,
            Some(reversed.slice(s![..ns, ..])),
            Some(logit_grads.view()),
        )?;
        let t = backward(params, &target_trace, Some(reversed.slice(s![ns.., ..])), None)?;
        g.add_scaled(&t, 1.0)?;
        g
    };
    grads.domain_head = Some(head_grads);
    Ok((
        grads,
        StepLosses {
            ce,
            domain: domain_loss,
        },
    ))
}

pub fn dann_step(
    params: &mut ModelParams,
    source: ArrayView2<f64>,
    labels: &[usize],
    target: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<StepLosses> {
    let (grads, losses) = dann_gradients(params, source, labels, target, config)?;
    sgd_step(params, &grads, &config.optimizer)?;
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub ce_loss: f64,
    /// Mean OT value or domain BCE over the epoch's steps.
    pub domain_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Kept out of serialized reports so they stay reproducible byte for byte.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    /// Metrics of the selected parameters.
    pub splits: BTreeMap<Split, SplitMetrics>,
    /// Test-split accuracy per (domain, subcluster), when tags exist.
    pub test_subclusters: Option<Vec<SubclusterCell>>,
    pub masked_accuracy: Option<f64>,
    /// Domain ids of the validation and test splits the run saw.
    pub val_domains: Vec<u32>,
    pub test_domains: Vec<u32>,
}

impl RunReport {
    pub fn accuracy(&self, split: Split) -> f64 {
        self.splits[&split].accuracy
    }

    /// `{method}_a{alpha}_s{seed}_t{test domains}`: unique per run, including
    /// runs on swapped splits.
    pub fn run_id(&self) -> String {
        let test: Vec<String> = self.test_domains.iter().map(u32::to_string).collect();
        format!("{}_t{}", self.config.run_id(), test.join("-"))
    }
}

/// A finished run: its report and the selected parameters.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub report: RunReport,
    pub params: ModelParams,
}

/// Logits of a whole split.
pub fn split_logits(params: &ModelParams, data: &SplitData) -> Result<Array2<f64>> {
    let trace = forward(params, data.features.view())?;
    Ok(trace.logits().expect("full forward").to_owned())
}

pub fn split_metrics(params: &ModelParams, data: &SplitData) -> Result<SplitMetrics> {
    let logits = split_logits(params, data)?;
    let accuracy = eval::accuracy(logits.view(), &data.labels)?;
    let auc = match eval::roc_auc(&eval::class1_scores(logits.view()), &data.labels) {
        Ok(roc) => Some(roc.auc),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SplitMetrics {
        accuracy,
        auc,
        samples: data.len(),
    })
}

/// Trains one model.
///
/// Source batches come from the training domains, reshuffled every epoch.
/// Methods `ot` and `dann` pair each source batch with an equally sized
/// batch of validation-domain inputs, drawn cyclically from a shuffled order;
/// validation labels never enter a loss. With early stopping the parameters
/// of the epoch with the best validation accuracy (latest on ties) are
/// kept, otherwise those of the last epoch.
pub fn train(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    dataset.validate()?;
    let train = dataset.split(Split::Train);
    let val = dataset.split(Split::Val);
    let test = dataset.split(Split::Test);
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Config("every split needs at least one sample".into()));
    }

    let mut params = ModelParams::init(&config.architecture(dataset.dim()), config.seed)?;
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut target_rng = stream_rng(config.seed, TARGET_STREAM);
    let mut target_order: Vec<usize> = (0..val.len()).collect();
    let mut target_pos = target_order.len();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut ce_sum, mut domain_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let xs = train.features.select(Axis(0), chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let xt = match config.method {
                Method::Erm => None,
                _ => {
                    let mut rows = Vec::with_capacity(chunk.len());
                    while rows.len() < chunk.len() {
                        if target_pos == target_order.len() {
                            target_order.shuffle(&mut target_rng);
                            target_pos = 0;
                        }
                        rows.push(target_order[target_pos]);
                        target_pos += 1;
                    }
                    Some(val.features.select(Axis(0), &rows))
                }
            };
            let losses = match config.method {
                Method::Dann => dann_step(
                    &mut params,
                    xs.view(),
                    &ys,
                    xt.as_ref().expect("target batch").view(),
                    config,
                )?,
                _ => composite_loss_step(
                    &mut params,
                    xs.view(),
                    &ys,
                    xt.as_ref().map(|x| x.view()),
                    config,
                )?,
            };
            ce_sum += losses.ce;
            domain_sum += losses.domain;
            steps += 1;
        }
        let train_accuracy = split_metrics(&params, &train)?.accuracy;
        let val_accuracy = split_metrics(&params, &val)?.accuracy;
        let test_accuracy = split_metrics(&params, &test)?.accuracy;
        let record = EpochRecord {
            epoch,
            ce_loss: ce_sum / steps as f64,
            domain_loss: domain_sum / steps as f64,
            train_accuracy,
            val_accuracy,
            test_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if !(record.ce_loss.is_finite() && record.domain_loss.is_finite()) {
            return Err(Error::Contract(format!("non-finite loss in epoch {epoch}")));
        }
        records.push(record);
        let improves = best.as_ref().is_none_or(|(acc, _, _)| val_accuracy >= *acc);
        if !config.early_stopping || improves {
            best = Some((val_accuracy, epoch, params.clone()));
        }
    }

    let (_, selected_epoch, params) = best.expect("at least one epoch");
    let mut splits = BTreeMap::new();
    for (split, data) in [(Split::Train, &train), (Split::Val, &val), (Split::Test, &test)] {
        splits.insert(split, split_metrics(&params, data)?);
    }
    let test_subclusters = match &test.subclusters {
        Some(tags) => {
            let pred = eval::predictions(split_logits(&params, &test)?.view());
            Some(eval::subcluster_breakdown(
                &pred,
                &test.labels,
                &test.domains,
                Some(tags),
                &dataset.metadata.masked_subclusters,
            )?)
        }
        None => None,
    };
    let masked_accuracy = test_subclusters.as_deref().and_then(eval::masked_accuracy);
    Ok(TrainedModel {
        report: RunReport {
            config: config.clone(),
            seed: config.seed,
            epochs: records,
            selected_epoch,
            splits,
            test_subclusters,
            masked_accuracy,
            val_domains: split_domains(dataset, Split::Val).into_iter().collect(),
            test_domains: split_domains(dataset, Split::Test).into_iter().collect(),
        },
        params,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One row of an α sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub val_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub method: Method,
    pub rows: Vec<SweepRow>,
    /// α with the highest mean validation accuracy (first on ties).
    pub selected_alpha: f64,
}

impl SweepTable {
    pub fn selected(&self) -> &SweepRow {
        self.rows
            .iter()
            .find(|r| r.alpha == self.selected_alpha)
            .expect("selected α is a row")
    }
}

/// Groups finished runs by α (in the order of `alphas`) and aggregates them.
pub fn aggregate_sweep(method: Method, alphas: &[f64], reports: &[RunReport]) -> Result<SweepTable> {
    if alphas.is_empty() {
        return Err(Error::Config("empty α grid".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut runs: Vec<&RunReport> = reports.iter().filter(|r| r.config.alpha == alpha).collect();
        if runs.is_empty() {
            return Err(Error::Contract(format!("no runs for alpha {alpha}")));
        }
        runs.sort_by_key(|r| r.seed);
        let val: Vec<f64> = runs.iter().map(|r| r.accuracy(Split::Val)).collect();
        let test: Vec<f64> = runs.iter().map(|r| r.accuracy(Split::Test)).collect();
        let (val_mean, val_std) = eval::mean_std(&val);
        let (test_mean, test_std) = eval::mean_std(&test);
        rows.push(SweepRow {
            alpha,
            seeds: runs.iter().map(|r| r.seed).collect(),
            val_accuracy: val,
            test_accuracy: test,
            val_mean,
            val_std,
            test_mean,
            test_std,
        });
    }
    let selected_alpha = rows
        .iter()
        .fold(&rows[0], |best, r| if r.val_mean > best.val_mean { r } else { best })
        .alpha;
    Ok(SweepTable {
        method,
        rows,
        selected_alpha,
    })
}

/// Configurations of every (α, seed) cell of a sweep, α-major.
pub fn sweep_configs(base: &TrainConfig, alphas: &[f64], seeds: &[u64]) -> Vec<TrainConfig> {
    alphas
        .iter()
        .flat_map(|&alpha| {
            seeds.iter().map(move |&seed| TrainConfig {
                alpha,
                seed,
                ..base.clone()
            })
        })
        .collect()
}

/// Runs every (α, seed) cell sequentially and aggregates the results.
pub fn alpha_sweep(
    dataset: &DomainDataset,
    base: &TrainConfig,
    alphas: &[f64],
    seeds: &[u64],
) -> Result<(SweepTable, Vec<RunReport>)> {
    if seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    let reports = sweep_configs(base, alphas, seeds)
        .iter()
        .map(|cfg| train(dataset, cfg).map(|m| m.report))
        .collect::<Result<Vec<_>>>()?;
    let table = aggregate_sweep(base.method, alphas, &reports)?;
    Ok((table, reports))
}

/// Features of every row of a split under frozen parameters.
pub fn split_features(params: &ModelParams, data: &SplitData) -> Result<Array2<f64>> {
    Ok(nn::forward_features(params, data.features.view())?.0)
}
