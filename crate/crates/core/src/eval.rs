//! Accuracy, ROC/AUC, per-subcluster breakdowns and a PCA projection.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax;

/// Row-wise argmax. Ties go to the lower class index.
pub fn predictions(logits: ArrayView2<f64>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::Contract("accuracy of an empty batch".into()));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Contract(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    Ok(prediction_accuracy(&predictions(logits), labels))
}

fn prediction_accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// Softmax probability of class 1 for every row.
pub fn class1_scores(logits: ArrayView2<f64>) -> Vec<f64> {
    softmax(logits).column(1).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending. A sample is called positive when its score is `>=` the
    /// threshold; the first threshold lies above every score so the curve
    /// starts at (0, 0).
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve by a sweep over the distinct scores, AUC by the trapezoid rule.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both classes among the labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![scores[order[0]] + 1.0];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        fpr.push(fp as f64 / negatives as f64);
        tpr.push(tp as f64 / positives as f64);
    }
    let auc = trapezoid(&fpr, &tpr);
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// Trapezoidal integral of `y` over `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) * 0.5)
        .sum()
}

/// Accuracy of one (domain, subcluster) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclusterCell {
    pub domain: u32,
    pub subcluster: u32,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// The subcluster is absent from every training domain.
    pub masked: bool,
}

/// Accuracy per (domain, subcluster) cell, cells sorted by domain then tag.
pub fn subcluster_breakdown(
    predictions: &[usize],
    labels: &[usize],
    domains: &[u32],
    tags: Option<&[u32]>,
    masked: &[u32],
) -> Result<Vec<SubclusterCell>> {
    let tags = tags.ok_or_else(|| {
        Error::FeatureUnavailable("the dataset carries no subcluster tags".into())
    })?;
    let n = labels.len();
    if predictions.len() != n || domains.len() != n || tags.len() != n {
        return Err(Error::Contract("breakdown inputs differ in length".into()));
    }
    let mut cells: std::collections::BTreeMap<(u32, u32), (usize, usize)> = Default::default();
    for i in 0..n {
        let cell = cells.entry((domains[i], tags[i])).or_default();
        cell.0 += 1;
        cell.1 += usize::from(predictions[i] == labels[i]);
    }
    Ok(cells
        .into_iter()
        .map(|((domain, subcluster), (count, correct))| SubclusterCell {
            domain,
            subcluster,
            count,
            correct,
            accuracy: correct as f64 / count as f64,
            masked: masked.contains(&subcluster),
        })
        .collect())
}

/// Accuracy over the cells whose tag is masked, or `None` if there are none.
pub fn masked_accuracy(cells: &[SubclusterCell]) -> Option<f64> {
    let (count, correct) = cells
        .iter()
        .filter(|c| c.masked)
        .fold((0, 0), |(n, k), c| (n + c.count, k + c.correct));
    (count > 0).then(|| correct as f64 / count as f64)
}

/// Two-component principal projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `n × 2` coordinates of the centered rows.
    pub coordinates: Array2<f64>,
    /// `2 × f`, one unit direction per row.
    pub components: Array2<f64>,
    /// Variance along each component (divisor `n − 1`).
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Centers the rows and projects them onto the two leading eigenvectors of
/// the sample covariance. Each component's largest-magnitude loading is made
/// positive (first index on ties).
pub fn pca_project(features: ArrayView2<f64>) -> Result<Projection> {
    let (n, f) = features.dim();
    if n < 2 || f == 0 {
        return Err(Error::Contract(format!("PCA needs >= 2 rows, got {n}")));
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = &features - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let total_variance = cov.diag().sum();
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if total_variance <= 0.0 || scale == 0.0 {
        return Err(Error::DegenerateProjection);
    }
    let (values, vectors) = symmetric_eigen(cov);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut components = Array2::zeros((2, f));
    let mut explained = [0.0; 2];
    for (r, &k) in order.iter().take(2).enumerate() {
        let mut v = vectors.column(k).to_owned();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        components.row_mut(r).assign(&v);
        explained[r] = values[k].max(0.0);
    }
    Ok(Projection {
        coordinates: centered.dot(&components.t()),
        components,
        explained_variance: explained,
        total_variance,
    })
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as columns.
fn symmetric_eigen(mut a: Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::eye(n);
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}

/// Mean and sample standard deviation (divisor `n − 1`; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `0.891 (0.005)`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ({std:.3})")
}
