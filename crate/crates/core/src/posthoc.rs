//! Post-hoc alignment of frozen features with a Sinkhorn barycentric map.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::eval;
use crate::nn::{forward_classifier, ModelParams};
use crate::ot::{pairwise_cost, sinkhorn_weights, Epsilon, Metric, SinkhornConfig, TransportPlan};
use crate::train::split_features;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosthocConfig {
    /// Absolute ε, in the units of the cost matrix.
    pub epsilon: f64,
    pub metric: Metric,
    /// Source-train rows kept for the alignment (seeded subsample).
    pub max_source_rows: usize,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
    pub seed: u64,
}

impl Default for PosthocConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            metric: Metric::SquaredEuclidean,
            max_source_rows: 2048,
            max_iterations: 10_000,
            marginal_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl PosthocConfig {
    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: Epsilon::Absolute(self.epsilon),
            max_iterations: self.max_iterations,
            marginal_tolerance: self.marginal_tolerance,
            log_domain: true,
        }
    }
}

/// Aligned target features and the plan that produced them.
#[derive(Debug, Clone)]
pub struct BarycentricMap {
    pub aligned: Array2<f64>,
    /// `n_t × n_s`: rows are target samples, columns source samples.
    pub plan: TransportPlan,
}

/// Replaces every target row by the plan-weighted mean of the source rows it
/// is coupled to. The plan is solved with the target as the first measure.
pub fn barycentric_map(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    epsilon: f64,
    metric: Metric,
) -> Result<BarycentricMap> {
    let cfg = PosthocConfig {
        epsilon,
        metric,
        ..PosthocConfig::default()
    };
    barycentric_map_with(source, target, &cfg)
}

fn barycentric_map_with(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    cfg: &PosthocConfig,
) -> Result<BarycentricMap> {
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::Contract("barycentric map of an empty point set".into()));
    }
    let cost = pairwise_cost(target, source, cfg.metric)?;
    let (nt, ns) = cost.dim();
    let p = ndarray::Array1::from_elem(nt, 1.0 / nt as f64);
    let q = ndarray::Array1::from_elem(ns, 1.0 / ns as f64);
    let plan = sinkhorn_weights(cost.view(), p.view(), q.view(), &cfg.sinkhorn())?;
    if !plan.converged {
        return Err(Error::NotConverged {
            iterations: plan.iterations_used,
            row_residual: plan.row_residual,
            col_residual: plan.col_residual,
        });
    }
    let mass = plan.gamma.sum_axis(Axis(1));
    if let Some(j) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::DegenerateMass(j));
    }
    let mut aligned = plan.gamma.dot(&source);
    for (mut row, &m) in aligned.outer_iter_mut().zip(mass.iter()) {
        row.mapv_inplace(|v| v / m);
    }
    Ok(BarycentricMap { aligned, plan })
}

/// Accuracy of one split before and after alignment.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub aligned_features: Array2<f64>,
    pub plan: TransportPlan,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPair {
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocSummary {
    pub config: PosthocConfig,
    pub source_rows: usize,
    pub splits: BTreeMap<Split, AccuracyPair>,
}

/// Aligns the frozen validation and test features of `params` onto its
/// source-train features and classifies them with the frozen head.
pub fn evaluate_posthoc(
    dataset: &DomainDataset,
    params: &ModelParams,
    config: &PosthocConfig,
) -> Result<(PosthocSummary, BTreeMap<Split, AlignmentResult>)> {
    dataset.validate()?;
    let train = dataset.split(Split::Train);
    let mut source = split_features(params, &train)?;
    if source.nrows() > config.max_source_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut keep = sample(&mut rng, source.nrows(), config.max_source_rows).into_vec();
        keep.sort_unstable();
        source = source.select(Axis(0), &keep);
    }
    let mut results = BTreeMap::new();
    let mut splits = BTreeMap::new();
    for split in [Split::Val, Split::Test] {
        let data = dataset.split(split);
        let features = split_features(params, &data)?;
        let pre = eval::accuracy(forward_classifier(params, features.view())?.view(), &data.labels)?;
        let map = barycentric_map_with(source.view(), features.view(), config)?;
        let post = eval::accuracy(
            forward_classifier(params, map.aligned.view())?.view(),
            &data.labels,
        )?;
        splits.insert(split, AccuracyPair { pre, post });
        results.insert(
            split,
            AlignmentResult {
                aligned_features: map.aligned,
                plan: map.plan,
                pre_accuracy: pre,
                post_accuracy: post,
            },
        );
    }
    Ok((
        PosthocSummary {
            config: config.clone(),
            source_rows: source.nrows(),
            splits,
        },
        results,
    ))
}
