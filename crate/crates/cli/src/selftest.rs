//! Oracle checks runnable from the shipped binary.

use ndarray::Array2;
use otda_core::eval::roc_auc;
use otda_core::nn::{Architecture, ModelParams};
use otda_core::ot::{
    cost_matrix, exact_ot_bruteforce, marginal_residual, ot_value_and_point_grads, sinkhorn,
    DiscreteDistribution, Metric, SinkhornConfig,
};
use otda_core::train::{composite_gradients, Method, TrainConfig};
use otda_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;

fn points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

/// Worst relative gap to the brute-force optimum over 100 instances.
fn bruteforce_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SinkhornConfig {
        max_iterations: 1_000_000,
        ..SinkhornConfig::with_epsilon(1e-3)
    };
    let (mut worst_gap, mut worst_residual, mut ok) = (0.0f64, 0.0f64, true);
    for case in 0..100 {
        let n = 4 + case % 3;
        let s = DiscreteDistribution::uniform(points(&mut rng, n, 8))?;
        let t = DiscreteDistribution::uniform(points(&mut rng, n, 8))?;
        let c = cost_matrix(&s, &t, Metric::Euclidean)?;
        let (_, exact) = exact_ot_bruteforce(&c, &s, &t)?;
        let plan = sinkhorn(&c, &s, &t, &cfg)?;
        let (r, col) = marginal_residual(&plan, &s, &t)?;
        let gap = (plan.value_cost - exact) / exact;
        worst_gap = worst_gap.max(gap.abs());
        worst_residual = worst_residual.max(r.max(col));
        ok &= plan.converged && plan.value_cost >= exact - 1e-6 && gap <= 0.01 && r.max(col) <= 1e-6;
    }
    Ok((ok, format!("max gap {worst_gap:.2e}, max residual {worst_residual:.2e}")))
}

fn tight(eps: f64) -> SinkhornConfig {
    SinkhornConfig {
        max_iterations: 200_000,
        marginal_tolerance: 1e-12,
        ..SinkhornConfig::with_epsilon(eps)
    }
}

fn point_gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let metric = if case % 2 == 0 { Metric::Euclidean } else { Metric::SquaredEuclidean };
        let x = points(&mut rng, 3 + case % 3, 3);
        let y = points(&mut rng, 2 + case % 4, 3);
        let cfg = tight(0.25);
        let out = ot_value_and_point_grads(x.view(), y.view(), &cfg, metric)?;
        let value = |x: &Array2<f64>| -> Result<f64> {
            Ok(ot_value_and_point_grads(x.view(), y.view(), &cfg, metric)?.value)
        };
        let mut numeric = Vec::new();
        for idx in ndarray::indices(x.dim()) {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += FD_STEP;
            m[idx] -= FD_STEP;
            numeric.push((value(&p)? - value(&m)?) / (2.0 * FD_STEP));
        }
        let analytic: Vec<f64> = out.source_grads.iter().copied().collect();
        worst = worst.max(scaled_error(&analytic, &numeric));
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn composite_parameter_gradients() -> Result<(bool, String)> {
    let arch = Architecture {
        input_dim: 3,
        featurizer_widths: vec![5, 4],
        classifier_hidden: vec![],
        num_classes: 2,
        domain_hidden: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let params = ModelParams::init(&arch, case)?;
        let xs = points(&mut rng, 5, 3);
        let xt = points(&mut rng, 5, 3) + 0.7;
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
        let cfg = TrainConfig {
            method: Method::Ot,
            alpha: rng.random_range(0.1..2.0),
            sinkhorn: SinkhornConfig {
                max_iterations: 100_000,
                marginal_tolerance: 1e-13,
                ..SinkhornConfig::with_epsilon(0.5)
            },
            ..TrainConfig::default()
        };
        let loss = |p: &ModelParams| -> Result<f64> {
            let (_, l) = composite_gradients(p, xs.view(), &labels, Some(xt.view()), &cfg)?;
            Ok(l.ce + cfg.alpha * l.domain)
        };
        let (grads, _) = composite_gradients(&params, xs.view(), &labels, Some(xt.view()), &cfg)?;
        let mut numeric = Vec::new();
        for i in 0..params.net.parameter_count() {
            let (mut p, mut m) = (params.clone(), params.clone());
            *p.net.parameter_mut(i).expect("index in range") += FD_STEP;
            *m.net.parameter_mut(i).expect("index in range") -= FD_STEP;
            numeric.push((loss(&p)? - loss(&m)?) / (2.0 * FD_STEP));
        }
        worst = worst.max(scaled_error(&grads.flatten(), &numeric));
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn auc_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 2..=50 {
        for _ in 0..10 {
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            if !(labels.contains(&0) && labels.contains(&1)) {
                continue;
            }
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let (mut num, mut pairs) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1.0;
                        num += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            let auc = roc_auc(&scores, &labels)?.auc;
            worst = worst.max((auc - num / pairs).abs());
            cases += 1;
        }
    }
    Ok((worst <= 1e-12, format!("{cases} cases, max deviation {worst:.2e}")))
}

pub fn run() -> Result<()> {
    type Check = fn() -> Result<(bool, String)>;
    let checks: [(&str, Check); 4] = [
        ("sinkhorn vs brute-force optimum", bruteforce_oracle),
        ("OT point gradients vs finite differences", point_gradients),
        ("composite-loss gradients vs finite differences", composite_parameter_gradients),
        ("AUC vs pairwise concordance", auc_oracle),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = check()?;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(Error::Contract(format!("selftest: {failed} check(s) failed")));
    }
    Ok(())
}
