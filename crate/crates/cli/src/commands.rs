use std::path::Path;
use std::time::Instant;

use otda_core::data::{self, DomainDataset, GeneratorConfig, Split};
use otda_core::nn::save_checkpoint;
use otda_core::ot::{Epsilon, Metric};
use otda_core::posthoc::{evaluate_posthoc, PosthocConfig, PosthocSummary};
use otda_core::report::{self, REPORTS_DIR};
use otda_core::train::{aggregate_sweep, sweep_configs, train as train_model, Method, TrainConfig, TrainedModel};
use otda_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::{GenDataArgs, MethodArg, MetricArg, ReportArgs, RunArgs};

/// The α grid of the paper's sweep.
pub const DEFAULT_ALPHAS: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
const DEFAULT_SEEDS: u64 = 4;
const DEFAULT_ADAPT_ALPHA: f64 = 0.1;
pub const THREADS_ENV: &str = "OTDA_THREADS";

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Erm => Method::Erm,
            MethodArg::Ot => Method::Ot,
            MethodArg::Dann => Method::Dann,
        }
    }
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Squared => Metric::SquaredEuclidean,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let patch: Value = serde_json::from_str(&read_text(path)?)?;
    if !patch.is_object() {
        return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
    }
    let mut value = serde_json::to_value(base)?;
    merge(&mut value, patch);
    serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Invocation<'a, T: Serialize> {
    command: &'a str,
    #[serde(flatten)]
    details: T,
}

fn snapshot<T: Serialize>(root: &Path, command: &str, details: T) -> Result<()> {
    report::write_json(
        &root.join(format!("invocation_{command}.json")),
        &Invocation { command, details },
    )
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = overlay(&GeneratorConfig::default_benchmark(a.seed), a.config.as_deref())?;
    let ds = data::generate(&cfg)?;
    data::save(&ds, &a.out)?;
    snapshot(&a.out, "gen-data", &cfg)?;
    eprintln!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

/// Training config from the flags, with the config file laid over them.
fn train_config(a: &RunArgs, method: Method, alpha: f64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        method,
        alpha,
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        cfg.optimizer.momentum = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.optimizer.weight_decay = v;
    }
    if let Some(v) = a.epsilon {
        cfg.sinkhorn.epsilon = Epsilon::Absolute(v);
    }
    if let Some(m) = a.metric {
        cfg.metric = m.into();
    }
    if let Some(v) = a.log_domain {
        cfg.sinkhorn.log_domain = v;
    }
    let cfg = overlay(&cfg, a.config.as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn seeds(a: &RunArgs, default_count: u64) -> Result<Vec<u64>> {
    let n = a.seeds.unwrap_or(default_count);
    if n == 0 {
        return Err(Error::Config("--seeds must be positive".into()));
    }
    Ok((a.seed..a.seed + n).collect())
}

fn alphas(a: &RunArgs, default: &[f64]) -> Result<Vec<f64>> {
    let list = match (&a.alphas, a.alpha) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --alpha or --alphas".into())),
        (Some(list), None) => list.clone(),
        (None, Some(v)) => vec![v],
        (None, None) => default.to_vec(),
    };
    if list.is_empty() || list.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Config("α values must be finite and >= 0".into()));
    }
    Ok(list)
}

fn load_data(a: &RunArgs) -> Result<DomainDataset> {
    let ds = data::load(&a.data)?;
    ds.validate()?;
    Ok(if a.swap_val_test { data::swap_val_test(&ds) } else { ds })
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Trains every config on a bounded worker pool; results keep input order.
fn train_all(ds: &DomainDataset, configs: &[TrainConfig]) -> Result<Vec<TrainedModel>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let started = Instant::now();
                let model = train_model(ds, cfg)?;
                let r = &model.report;
                eprintln!(
                    "{}: epoch {} val {:.4} test {:.4} ({:.1}s)",
                    r.run_id(),
                    r.selected_epoch,
                    r.accuracy(Split::Val),
                    r.accuracy(Split::Test),
                    started.elapsed().as_secs_f64()
                );
                Ok(model)
            })
            .collect()
    })
}

/// Writes every file of one run under `root`.
fn persist(root: &Path, ds: &DomainDataset, model: &TrainedModel, posthoc: Option<PosthocSummary>) -> Result<()> {
    let run = report::RunArtifacts {
        report: model.report.clone(),
        roc: report::roc_curves(ds, model)?,
        posthoc,
    };
    report::write_run(root, &run)?;
    report::write_embedding(root, &model.report, &report::embedding(ds, model)?)?;
    let dir = root.join(REPORTS_DIR).join(model.report.run_id());
    save_checkpoint(&model.params, &dir.join("model.json"))?;
    report::write_json(&dir.join(report::CONFIG_FILE), &model.report.config)
}

fn finish(root: &Path) -> Result<()> {
    let runs = report::read_runs(root)?;
    for path in report::emit_tables(root, &runs)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct GridSnapshot<'a> {
    data: String,
    swap_val_test: bool,
    alphas: &'a [f64],
    seeds: &'a [u64],
    base: &'a TrainConfig,
}

fn run_grid(command: &str, a: &RunArgs, method: Method, alpha_list: &[f64], seed_list: &[u64]) -> Result<Vec<TrainedModel>> {
    let base = train_config(a, method, alpha_list[0])?;
    let ds = load_data(a)?;
    snapshot(
        &a.out,
        command,
        GridSnapshot {
            data: a.data.display().to_string(),
            swap_val_test: a.swap_val_test,
            alphas: alpha_list,
            seeds: seed_list,
            base: &base,
        },
    )?;
    let configs = sweep_configs(&base, alpha_list, seed_list);
    let models = train_all(&ds, &configs)?;
    for m in &models {
        persist(&a.out, &ds, m, None)?;
    }
    Ok(models)
}

pub fn train(a: &RunArgs) -> Result<()> {
    let method = a.method.map_or(Method::Erm, Method::from);
    let alpha_list = alphas(a, &[0.0])?;
    run_grid("train", a, method, &alpha_list, &seeds(a, 1)?)?;
    finish(&a.out)
}

fn sweep_with(command: &str, a: &RunArgs, method: Method, default_alphas: &[f64]) -> Result<()> {
    let alpha_list = alphas(a, default_alphas)?;
    let seed_list = seeds(a, DEFAULT_SEEDS)?;
    let models = run_grid(command, a, method, &alpha_list, &seed_list)?;
    let reports: Vec<_> = models.into_iter().map(|m| m.report).collect();
    let table = aggregate_sweep(method, &alpha_list, &reports)?;
    let suffix = if a.swap_val_test { "_swapped" } else { "" };
    report::write_json(&a.out.join(format!("sweep_{method}{suffix}.json")), &table)?;
    eprintln!("selected α = {}", table.selected_alpha);
    finish(&a.out)
}

pub fn sweep(a: &RunArgs) -> Result<()> {
    sweep_with("sweep", a, a.method.map_or(Method::Ot, Method::from), &DEFAULT_ALPHAS)
}

pub fn dann(a: &RunArgs) -> Result<()> {
    if a.method.is_some_and(|m| m != MethodArg::Dann) {
        return Err(Error::Config("the dann subcommand always trains method dann".into()));
    }
    sweep_with("dann", a, Method::Dann, &[DEFAULT_ADAPT_ALPHA])
}

pub fn posthoc(a: &RunArgs) -> Result<()> {
    if a.method.is_some_and(|m| m != MethodArg::Erm) || a.alpha.is_some() || a.alphas.is_some() {
        return Err(Error::Config("posthoc aligns ERM models; --method/--alpha do not apply".into()));
    }
    let mut pcfg = PosthocConfig::default();
    if let Some(e) = a.epsilon {
        pcfg.epsilon = e;
    }
    if let Some(m) = a.metric {
        pcfg.metric = m.into();
    }
    // ε and the metric belong to the alignment here, not to training.
    let train_args = RunArgs {
        epsilon: None,
        metric: None,
        alphas: None,
        ..a.clone()
    };
    let base = train_config(&train_args, Method::Erm, 0.0)?;
    let ds = load_data(a)?;
    let seed_list = seeds(a, DEFAULT_SEEDS)?;
    #[derive(Serialize)]
    struct PosthocSnapshot<'a> {
        data: String,
        swap_val_test: bool,
        seeds: &'a [u64],
        base: &'a TrainConfig,
        alignment: &'a PosthocConfig,
    }
    snapshot(
        &a.out,
        "posthoc",
        PosthocSnapshot {
            data: a.data.display().to_string(),
            swap_val_test: a.swap_val_test,
            seeds: &seed_list,
            base: &base,
            alignment: &pcfg,
        },
    )?;
    let models = train_all(&ds, &sweep_configs(&base, &[0.0], &seed_list))?;
    for m in &models {
        let (summary, _) = evaluate_posthoc(&ds, &m.params, &pcfg)?;
        let pair = summary.splits[&Split::Test];
        eprintln!("{}: post-hoc test {:.4} -> {:.4}", m.report.run_id(), pair.pre, pair.post);
        persist(&a.out, &ds, m, Some(summary))?;
    }
    finish(&a.out)
}

pub fn swap_eval(a: &RunArgs) -> Result<()> {
    if a.swap_val_test {
        return Err(Error::Config("swap-eval runs both orientations; drop --swap-val-test".into()));
    }
    if a.alphas.is_some() {
        return Err(Error::Config("swap-eval takes a single --alpha".into()));
    }
    let alpha = a.alpha.unwrap_or(DEFAULT_ADAPT_ALPHA);
    let methods: Vec<Method> = match a.method {
        Some(m) => vec![Method::Erm, m.into()],
        None => vec![Method::Erm, Method::Ot, Method::Dann],
    };
    let seed_list = seeds(a, DEFAULT_SEEDS)?;
    for swapped in [false, true] {
        let args = RunArgs {
            swap_val_test: swapped,
            alpha: None,
            ..a.clone()
        };
        for &method in methods.iter().collect::<std::collections::BTreeSet<_>>() {
            let a_m = if method == Method::Erm { 0.0 } else { alpha };
            let name = format!("swap-eval_{method}{}", if swapped { "_swapped" } else { "" });
            run_grid(&name, &args, method, &[a_m], &seed_list)?;
        }
    }
    finish(&a.out)
}

pub fn report(a: &ReportArgs) -> Result<()> {
    for path in report::emit_all(&a.out)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
