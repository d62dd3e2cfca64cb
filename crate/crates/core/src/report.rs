//! Tables, SVG plots and embedding exports for finished runs.
//!
//! Layout under an output root:
//! `reports/{run_id}/{metrics,roc}.json`, `tables/*.csv`, `plots/*.svg`,
//! `embeddings/*.csv`. Everything written here is a pure function of the
//! run reports, so re-emitting from the same reports gives identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{self, RocCurve};
use crate::posthoc::PosthocSummary;
use crate::train::{format_alpha, split_features, split_logits, Method, RunReport, TrainedModel};

pub const REPORTS_DIR: &str = "reports";
pub const TABLES_DIR: &str = "tables";
pub const PLOTS_DIR: &str = "plots";
pub const EMBEDDINGS_DIR: &str = "embeddings";
pub const METRICS_FILE: &str = "metrics.json";
pub const ROC_FILE: &str = "roc.json";
pub const POSTHOC_FILE: &str = "posthoc.json";
pub const CONFIG_FILE: &str = "config.json";

/// Rows per split kept in embedding exports.
pub const EMBEDDING_ROWS_PER_SPLIT: usize = 500;

/// Everything emitted for one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub roc: BTreeMap<Split, RocCurve>,
    pub posthoc: Option<PosthocSummary>,
}

/// Validation and test features of a run with their joint 2-D PCA.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub splits: Vec<Split>,
    pub domains: Vec<u32>,
    pub labels: Vec<usize>,
    pub subclusters: Option<Vec<u32>>,
    pub projection: Array2<f64>,
    pub raw: Array2<f64>,
}

/// ROC curves of the validation and test splits under the selected model.
pub fn roc_curves(dataset: &DomainDataset, model: &TrainedModel) -> Result<BTreeMap<Split, RocCurve>> {
    let mut out = BTreeMap::new();
    for split in [Split::Val, Split::Test] {
        let data = dataset.split(split);
        let scores = eval::class1_scores(split_logits(&model.params, &data)?.view());
        match eval::roc_auc(&scores, &data.labels) {
            Ok(roc) => {
                out.insert(split, roc);
            }
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Features of an evenly strided subsample of the validation and test rows.
pub fn embedding(dataset: &DomainDataset, model: &TrainedModel) -> Result<Embedding> {
    let mut splits = Vec::new();
    let mut domains = Vec::new();
    let mut labels = Vec::new();
    let mut tags = dataset.subclusters.as_ref().map(|_| Vec::new());
    let mut blocks = Vec::new();
    for split in [Split::Val, Split::Test] {
        let rows = dataset.indices(split);
        let stride = rows.len().div_ceil(EMBEDDING_ROWS_PER_SPLIT).max(1);
        let kept: Vec<usize> = rows.into_iter().step_by(stride).collect();
        let features = dataset.features.select(Axis(0), &kept);
        let data = crate::data::SplitData {
            features,
            labels: kept.iter().map(|&i| dataset.labels[i]).collect(),
            domains: kept.iter().map(|&i| dataset.domains[i]).collect(),
            subclusters: None,
        };
        blocks.push(split_features(&model.params, &data)?);
        splits.extend(std::iter::repeat_n(split, kept.len()));
        domains.extend(data.domains);
        labels.extend(data.labels);
        if let (Some(t), Some(all)) = (tags.as_mut(), dataset.subclusters.as_ref()) {
            t.extend(kept.iter().map(|&i| all[i]));
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let raw = concatenate(Axis(0), &views).map_err(|e| Error::Contract(e.to_string()))?;
    let projection = eval::pca_project(raw.view())?.coordinates;
    Ok(Embedding {
        splits,
        domains,
        labels,
        subclusters: tags,
        projection,
        raw,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Contract(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Contract(e.to_string()))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes the per-run files: report JSON, ROC JSON, subcluster table and the
/// training and ROC plots. Returns the paths written.
pub fn write_run(root: &Path, run: &RunArtifacts) -> Result<Vec<PathBuf>> {
    let id = run.report.run_id();
    let dir = root.join(REPORTS_DIR).join(&id);
    let mut written = Vec::new();
    let metrics = dir.join(METRICS_FILE);
    write_json(&metrics, &run.report)?;
    written.push(metrics);
    let roc = dir.join(ROC_FILE);
    write_json(&roc, &run.roc)?;
    written.push(roc);
    if let Some(p) = &run.posthoc {
        let path = dir.join(POSTHOC_FILE);
        write_json(&path, p)?;
        written.push(path);
    }
    written.extend(write_run_views(root, run)?);
    Ok(written)
}

/// Tables and plots derived from one run.
fn write_run_views(root: &Path, run: &RunArtifacts) -> Result<Vec<PathBuf>> {
    let id = run.report.run_id();
    let mut written = Vec::new();
    if let Some(cells) = &run.report.test_subclusters {
        let header = strings(&["domain_id", "subcluster", "count", "correct", "accuracy", "masked"]);
        let rows: Vec<Vec<String>> = cells
            .iter()
            .map(|c| {
                vec![
                    c.domain.to_string(),
                    c.subcluster.to_string(),
                    c.count.to_string(),
                    c.correct.to_string(),
                    format!("{:.4}", c.accuracy),
                    c.masked.to_string(),
                ]
            })
            .collect();
        let path = root.join(TABLES_DIR).join(format!("{id}_subclusters.csv"));
        write_file(&path, &csv_string(&header, &rows)?)?;
        written.push(path);
    }

    let epochs = &run.report.epochs;
    let series = |f: fn(&crate::train::EpochRecord) -> f64, name: &str| Series {
        name: name.to_string(),
        points: epochs.iter().map(|e| (e.epoch as f64, f(e))).collect(),
    };
    let domain_name = match run.report.config.method {
        Method::Dann => "domain BCE",
        _ => "OT loss",
    };
    let mut loss = vec![series(|e| e.ce_loss, "CE loss")];
    if run.report.config.method != Method::Erm {
        loss.push(series(|e| e.domain_loss, domain_name));
    }
    let acc = vec![
        series(|e| e.train_accuracy, "train"),
        series(|e| e.val_accuracy, "val"),
        series(|e| e.test_accuracy, "test"),
    ];
    let svg = two_panel_plot(
        &format!("{id}: training curves"),
        (&loss, "loss"),
        (&acc, "accuracy"),
        "epoch",
    );
    let path = root.join(PLOTS_DIR).join(format!("{id}_training.svg"));
    write_file(&path, &svg)?;
    written.push(path);

    if !run.roc.is_empty() {
        let curves: Vec<Series> = run
            .roc
            .iter()
            .map(|(split, roc)| Series {
                name: format!("{split} (AUC {:.3})", roc.auc),
                points: roc.fpr.iter().copied().zip(roc.tpr.iter().copied()).collect(),
            })
            .collect();
        let svg = line_plot(&PlotSpec {
            title: &format!("{id}: ROC"),
            x_label: "false positive rate",
            y_label: "true positive rate",
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            series: &curves,
            markers: false,
        });
        let path = root.join(PLOTS_DIR).join(format!("{id}_roc.svg"));
        write_file(&path, &svg)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `embeddings/{run_id}.csv`: split, domain, label, subcluster, the
/// two PCA coordinates and the raw features.
pub fn write_embedding(root: &Path, report: &RunReport, emb: &Embedding) -> Result<PathBuf> {
    let mut header = strings(&["split", "domain_id", "label", "subcluster", "pc1", "pc2"]);
    header.extend((0..emb.raw.ncols()).map(|j| format!("f{j}")));
    let rows: Vec<Vec<String>> = (0..emb.labels.len())
        .map(|i| {
            let mut r = vec![
                emb.splits[i].to_string(),
                emb.domains[i].to_string(),
                emb.labels[i].to_string(),
                emb.subclusters.as_ref().map_or(String::new(), |t| t[i].to_string()),
                format!("{:e}", emb.projection[[i, 0]]),
                format!("{:e}", emb.projection[[i, 1]]),
            ];
            r.extend(emb.raw.row(i).iter().map(|v| format!("{v:e}")));
            r
        })
        .collect();
    let path = root
        .join(EMBEDDINGS_DIR)
        .join(format!("{}.csv", report.run_id()));
    write_file(&path, &csv_string(&header, &rows)?)?;
    Ok(path)
}

/// Loads every run under `root/reports`, ordered by run id.
pub fn read_runs(root: &Path) -> Result<Vec<RunArtifacts>> {
    let dir = root.join(REPORTS_DIR);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        if entry.path().join(METRICS_FILE).is_file() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    dirs.iter()
        .map(|d| {
            let roc_path = d.join(ROC_FILE);
            let posthoc_path = d.join(POSTHOC_FILE);
            Ok(RunArtifacts {
                report: read_json(&d.join(METRICS_FILE))?,
                roc: if roc_path.is_file() {
                    read_json(&roc_path)?
                } else {
                    BTreeMap::new()
                },
                posthoc: if posthoc_path.is_file() {
                    Some(read_json(&posthoc_path)?)
                } else {
                    None
                },
            })
        })
        .collect()
}

/// Regenerates every per-run view and the cross-run tables and plots from
/// the reports found under `root`.
pub fn emit_all(root: &Path) -> Result<Vec<PathBuf>> {
    let runs = read_runs(root)?;
    if runs.is_empty() {
        return Err(Error::Config(format!(
            "no run reports under {}",
            root.join(REPORTS_DIR).display()
        )));
    }
    let mut written = Vec::new();
    for run in &runs {
        written.extend(write_run_views(root, run)?);
    }
    written.extend(emit_tables(root, &runs)?);
    Ok(written)
}

/// Mean (std) of a metric over the seeds of one group.
fn cell(values: &[f64]) -> String {
    if values.is_empty() {
        return String::new();
    }
    let (m, s) = eval::mean_std(values);
    eval::format_mean_std(m, s)
}

fn domains_label(domains: &[u32]) -> String {
    domains.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
}

type GroupKey = (Vec<u32>, Method, u64);

/// Runs grouped by (test domains, method, α bits), in a stable order.
fn group_runs(runs: &[RunArtifacts]) -> BTreeMap<GroupKey, Vec<&RunArtifacts>> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunArtifacts>> = BTreeMap::new();
    for r in runs {
        let key = (
            r.report.test_domains.clone(),
            r.report.config.method,
            r.report.config.alpha.to_bits(),
        );
        groups.entry(key).or_default().push(r);
    }
    for v in groups.values_mut() {
        v.sort_by_key(|r| r.report.seed);
    }
    groups
}

/// Cross-run CSV tables and sweep plots. Returns the paths written.
pub fn emit_tables(root: &Path, runs: &[RunArtifacts]) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::Contract("no reports to tabulate".into()));
    }
    let groups = group_runs(runs);
    let tables = root.join(TABLES_DIR);
    let mut written = Vec::new();

    // Method comparison: one row per (test domains, method, α).
    let header = strings(&[
        "test_domain",
        "method",
        "alpha",
        "seeds",
        "val_accuracy",
        "test_accuracy",
        "test_auc",
        "masked_subcluster_accuracy",
    ]);
    let mut rows = Vec::new();
    for ((test, method, alpha), members) in &groups {
        let reports: Vec<&RunReport> = members.iter().map(|r| &r.report).collect();
        let pick = |f: &dyn Fn(&RunReport) -> Option<f64>| -> Vec<f64> {
            reports.iter().filter_map(|r| f(r)).collect()
        };
        rows.push(vec![
            domains_label(test),
            method.to_string(),
            format_alpha(f64::from_bits(*alpha)),
            reports.len().to_string(),
            cell(&pick(&|r| Some(r.accuracy(Split::Val)))),
            cell(&pick(&|r| Some(r.accuracy(Split::Test)))),
            cell(&pick(&|r| r.splits[&Split::Test].auc)),
            cell(&pick(&|r| r.masked_accuracy)),
        ]);
        let post: Vec<f64> = members
            .iter()
            .filter_map(|r| r.posthoc.as_ref())
            .filter_map(|p| p.splits.get(&Split::Test).map(|a| a.post))
            .collect();
        if !post.is_empty() {
            let val: Vec<f64> = members
                .iter()
                .filter_map(|r| r.posthoc.as_ref())
                .filter_map(|p| p.splits.get(&Split::Val).map(|a| a.post))
                .collect();
            rows.push(vec![
                domains_label(test),
                format!("{method}+posthoc"),
                format_alpha(f64::from_bits(*alpha)),
                post.len().to_string(),
                cell(&val),
                cell(&post),
                String::new(),
                String::new(),
            ]);
        }
    }
    let path = tables.join("method_comparison.csv");
    write_file(&path, &csv_string(&header, &rows)?)?;
    written.push(path);

    // α grids: every (test domains, method) with more than one α.
    let mut sweeps: BTreeMap<(Vec<u32>, Method), Vec<(f64, Vec<&RunArtifacts>)>> = BTreeMap::new();
    for ((test, method, alpha), members) in &groups {
        sweeps
            .entry((test.clone(), *method))
            .or_default()
            .push((f64::from_bits(*alpha), members.clone()));
    }
    let several_tests = sweeps.keys().map(|(t, _)| t).collect::<BTreeSet<_>>().len() > 1;
    for ((test, method), mut cells) in sweeps {
        if cells.len() < 2 {
            continue;
        }
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        let suffix = if several_tests {
            format!("_t{}", domains_label(&test))
        } else {
            String::new()
        };
        let mut header = vec!["accuracy".to_string()];
        header.extend(cells.iter().map(|(a, _)| format_alpha(*a)));
        let row = |name: &str, split: Split| {
            let mut r = vec![name.to_string()];
            r.extend(cells.iter().map(|(_, members)| {
                cell(&members.iter().map(|m| m.report.accuracy(split)).collect::<Vec<_>>())
            }));
            r
        };
        let rows = vec![row("validation", Split::Val), row("test", Split::Test)];
        let path = tables.join(format!("{method}_alpha_grid{suffix}.csv"));
        write_file(&path, &csv_string(&header, &rows)?)?;
        written.push(path);

        let mean_curve = |members: &[&RunArtifacts], f: fn(&crate::train::EpochRecord) -> f64| {
            let epochs = members.iter().map(|m| m.report.epochs.len()).min().unwrap_or(0);
            (0..epochs)
                .map(|k| {
                    let v: Vec<f64> = members.iter().map(|m| f(&m.report.epochs[k])).collect();
                    ((k + 1) as f64, eval::mean_std(&v).0)
                })
                .collect::<Vec<_>>()
        };
        let per_alpha = |f: fn(&crate::train::EpochRecord) -> f64| -> Vec<Series> {
            cells
                .iter()
                .map(|(a, members)| Series {
                    name: format!("α={}", format_alpha(*a)),
                    points: mean_curve(members, f),
                })
                .collect()
        };
        let loss = per_alpha(|e| e.ce_loss);
        let acc = per_alpha(|e| e.val_accuracy);
        let svg = two_panel_plot(
            &format!("{method} α sweep (mean over seeds)"),
            (&loss, "CE loss"),
            (&acc, "validation accuracy"),
            "epoch",
        );
        let path = root.join(PLOTS_DIR).join(format!("{method}_alpha_curves{suffix}.svg"));
        write_file(&path, &svg)?;
        written.push(path);
    }

    // Swap comparison: the same (method, α) evaluated on different test domains.
    let test_sets: BTreeSet<Vec<u32>> = groups.keys().map(|(t, _, _)| t.clone()).collect();
    if test_sets.len() > 1 {
        let mut by_run: BTreeMap<(Method, u64), BTreeMap<Vec<u32>, Vec<f64>>> = BTreeMap::new();
        for ((test, method, alpha), members) in &groups {
            by_run.entry((*method, *alpha)).or_default().insert(
                test.clone(),
                members.iter().map(|m| m.report.accuracy(Split::Test)).collect(),
            );
        }
        let mut header = strings(&["method", "alpha"]);
        header.extend(test_sets.iter().map(|t| format!("test_domain_{}", domains_label(t))));
        let rows: Vec<Vec<String>> = by_run
            .iter()
            .map(|((method, alpha), cols)| {
                let mut r = vec![method.to_string(), format_alpha(f64::from_bits(*alpha))];
                r.extend(test_sets.iter().map(|t| cols.get(t).map_or(String::new(), |v| cell(v))));
                r
            })
            .collect();
        let path = tables.join("swap_comparison.csv");
        write_file(&path, &csv_string(&header, &rows)?)?;
        written.push(path);
    }
    Ok(written)
}

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct PlotSpec<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    x_range: (f64, f64),
    y_range: (f64, f64),
    series: &'a [Series],
    markers: bool,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn data_range(series: &[Series], axis: fn(&(f64, f64)) -> f64, pad: bool) -> (f64, f64) {
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.points.iter().map(axis))
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let margin = if pad { 0.05 * (hi - lo) } else { 0.0 };
    (lo - margin, hi + margin)
}

/// Plot body translated by `(dx, dy)`.
fn plot_group(spec: &PlotSpec, dx: f64, dy: f64) -> String {
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
    let (x0, x1) = spec.x_range;
    let (y0, y1) = spec.y_range;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let mut s = String::new();
    let _ = writeln!(s, "<g transform=\"translate({dx:.1},{dy:.1})\">");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(spec.title)
    );
    let _ = writeln!(
        s,
        "<rect x=\"{ml:.1}\" y=\"{mt:.1}\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#333\"/>"
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
            sx(fx),
            mt + ph + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
            ml - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        ml + pw / 2.0,
        HEIGHT - 12.0,
        escape(spec.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(spec.y_label)
    );
    for (i, series) in spec.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        if spec.markers {
            for p in &pts {
                let (cx, cy) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"2.5\" fill=\"{color}\"/>");
            }
        }
        let ly = mt + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ml + pw - 150.0,
            ml + pw - 132.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{}</text>",
            ml + pw - 126.0,
            ly + 4.0,
            escape(&series.name)
        );
    }
    s.push_str("</g>\n");
    s
}

fn tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.into()
    }
}

fn svg_document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn line_plot(spec: &PlotSpec) -> String {
    svg_document(WIDTH, HEIGHT, &plot_group(spec, 0.0, 0.0))
}

/// Two side-by-side panels sharing the x axis label.
fn two_panel_plot(title: &str, left: (&[Series], &str), right: (&[Series], &str), x_label: &str) -> String {
    let panel = |(series, y_label): (&[Series], &str), dx: f64| {
        plot_group(
            &PlotSpec {
                title: &format!("{title}: {y_label}"),
                x_label,
                y_label,
                x_range: data_range(series, |p| p.0, false),
                y_range: data_range(series, |p| p.1, true),
                series,
                markers: true,
            },
            dx,
            0.0,
        )
    };
    let body = panel(left, 0.0) + &panel(right, WIDTH);
    svg_document(2.0 * WIDTH, HEIGHT, &body)
}
