//! Discrete optimal transport between weighted point clouds.
//!
//! The solver works on the entropy-smoothed Kantorovich problem
//!
//! ```text
//! min_{Γ ∈ Π(p, q)}  <Γ, C> − ε·H(Γ),     H(Γ) = −Σ Γ_ij log Γ_ij
//! ```
//!
//! via Sinkhorn matrix scaling, either on the Gibbs kernel directly or on
//! log-potentials (the default, which does not underflow at small ε).
//!
//! Because the regularized optimum is differentiable in the cost with
//! `∂/∂C_ij = Γ*_ij`, [`ot_value_and_point_grads`] returns exact first-order
//! gradients with respect to the point coordinates without unrolling the
//! solver. [`exact_ot_bruteforce`] solves the unregularized problem by
//! permutation enumeration and exists to check the solver.

use itertools::Itertools;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ weights == 1`.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Smallest distance used when differentiating the euclidean cost; keeps the
/// gradient finite for coincident points.
pub const COINCIDENT_POINT_GUARD: f64 = 1e-12;

/// The iteration stops at this fraction of the marginal tolerance: the
/// residual of the assembled plan is recomputed from scratch and differs from
/// the running estimate by rounding.
const STOP_FRACTION: f64 = 0.5;
/// Marginal tolerance for the intermediate ε-annealing stages.
const ANNEAL_TOLERANCE: f64 = 1e-4;

/// Largest problem size accepted by [`exact_ot_bruteforce`].
pub const BRUTEFORCE_MAX_POINTS: usize = 8;

/// Ground cost between feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    #[serde(alias = "squared")]
    SquaredEuclidean,
}

impl Metric {
    fn eval(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            Metric::Euclidean => sq.sqrt(),
            Metric::SquaredEuclidean => sq,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "squared" | "squared_euclidean" => Ok(Metric::SquaredEuclidean),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Empirical measure `Σ_i w_i δ_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::Contract(format!(
                "distribution needs n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if weights.len() != n {
            return Err(Error::Contract(format!(
                "{} weights for {n} points",
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite point coordinate".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Contract("weights must be finite and >= 0".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Contract(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights `1/n` on every point.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        let weights = Array1::from_elem(n, 1.0 / n.max(1) as f64);
        Self::new(points, weights)
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-12)
    }
}

/// Pairwise ground costs between a source and a target point set.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    metric: Metric,
}

impl CostMatrix {
    /// Wraps precomputed costs; entries must be finite and nonnegative.
    pub fn from_entries(entries: Array2<f64>, metric: Metric) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Contract("empty cost matrix".into()));
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Contract(
                "cost entries must be finite and >= 0".into(),
            ));
        }
        Ok(Self { entries, metric })
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim(&self) -> (usize, usize) {
        self.entries.dim()
    }

    pub fn mean(&self) -> f64 {
        self.entries.mean().unwrap_or(0.0)
    }

    pub fn transposed(&self) -> Self {
        Self {
            entries: self.entries.t().to_owned(),
            metric: self.metric,
        }
    }
}

/// Pairwise costs between the rows of two point matrices.
pub fn pairwise_cost(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    metric: Metric,
) -> Result<Array2<f64>> {
    if source.ncols() != target.ncols() {
        return Err(Error::Contract(format!(
            "feature dimension mismatch: {} vs {}",
            source.ncols(),
            target.ncols()
        )));
    }
    let mut out = Array2::zeros((source.nrows(), target.nrows()));
    for (i, x) in source.outer_iter().enumerate() {
        for (j, y) in target.outer_iter().enumerate() {
            out[[i, j]] = metric.eval(x, y);
        }
    }
    Ok(out)
}

pub fn cost_matrix(
    source: &DiscreteDistribution,
    target: &DiscreteDistribution,
    metric: Metric,
) -> Result<CostMatrix> {
    let entries = pairwise_cost(source.points(), target.points(), metric)?;
    CostMatrix::from_entries(entries, metric)
}

/// `−Σ Γ_ij log Γ_ij` with `0·log 0 = 0`.
pub fn entropy(gamma: ArrayView2<f64>) -> Result<f64> {
    let mut h = 0.0;
    for &g in gamma.iter() {
        if g < 0.0 || g.is_nan() {
            return Err(Error::Contract(format!("negative plan entry {g}")));
        }
        if g > 0.0 {
            h -= g * g.ln();
        }
    }
    Ok(h)
}

/// Max-norm deviation of the plan's row and column sums from `p` and `q`.
pub fn marginal_residual_weights(
    gamma: ArrayView2<f64>,
    p: ArrayView1<f64>,
    q: ArrayView1<f64>,
) -> Result<(f64, f64)> {
    if gamma.dim() != (p.len(), q.len()) {
        return Err(Error::Contract(format!(
            "plan shape {:?} does not match marginals ({}, {})",
            gamma.dim(),
            p.len(),
            q.len()
        )));
    }
    let rows = gamma.sum_axis(Axis(1));
    let cols = gamma.sum_axis(Axis(0));
    let max_dev = |a: &Array1<f64>, b: ArrayView1<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok((max_dev(&rows, p), max_dev(&cols, q)))
}

pub fn marginal_residual(
    plan: &TransportPlan,
    source: &DiscreteDistribution,
    target: &DiscreteDistribution,
) -> Result<(f64, f64)> {
    marginal_residual_weights(plan.gamma.view(), source.weights(), target.weights())
}

/// Regularization strength, either absolute or proportional to the mean cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    Absolute(f64),
    /// `factor × mean(C)`, recomputed for every cost matrix. The factor is
    /// used as an absolute value when every cost is zero.
    MeanCostRelative(f64),
}

impl Epsilon {
    pub fn resolve(self, cost: ArrayView2<f64>) -> f64 {
        match self {
            Epsilon::Absolute(e) => e,
            Epsilon::MeanCostRelative(factor) => {
                let mean = cost.mean().unwrap_or(0.0);
                if mean > 0.0 {
                    factor * mean
                } else {
                    factor
                }
            }
        }
    }

    fn value(self) -> f64 {
        match self {
            Epsilon::Absolute(e) | Epsilon::MeanCostRelative(e) => e,
        }
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::MeanCostRelative(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: Epsilon,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::default(),
            max_iterations: 1000,
            marginal_tolerance: 1e-6,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    /// Default solver settings with a fixed ε.
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon: Epsilon::Absolute(epsilon),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.epsilon.value();
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {e}")));
        }
        if !(self.marginal_tolerance > 0.0) {
            return Err(Error::Config(format!(
                "marginal_tolerance must be > 0, got {}",
                self.marginal_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Coupling between a source and a target measure.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: Array2<f64>,
    /// Source potential `f` (cost units).
    pub dual_f: Array1<f64>,
    /// Target potential `g` (cost units).
    pub dual_g: Array1<f64>,
    /// `<Γ, C>`.
    pub value_cost: f64,
    /// `<Γ, C> − ε·H(Γ)`.
    pub value_regularized: f64,
    /// The resolved regularization strength (0 for exact plans).
    pub epsilon: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub row_residual: f64,
    pub col_residual: f64,
}

impl TransportPlan {
    pub fn entropy(&self) -> f64 {
        // gamma entries are nonnegative by construction
        entropy(self.gamma.view()).unwrap_or(f64::NAN)
    }
}

/// Minimum-cost permutation plan for uniform, equal-size marginals.
///
/// Enumerates all `n!` matchings, so `n` is capped at
/// [`BRUTEFORCE_MAX_POINTS`]. For uniform equal-size marginals the optimum
/// of the transport LP is attained at a permutation matrix, so this is the
/// exact unregularized optimum.
pub fn exact_ot_bruteforce(
    cost: &CostMatrix,
    source: &DiscreteDistribution,
    target: &DiscreteDistribution,
) -> Result<(TransportPlan, f64)> {
    let n = source.len();
    if target.len() != n {
        return Err(Error::Unsupported(format!(
            "brute force needs equal sizes, got {n} and {}",
            target.len()
        )));
    }
    if n > BRUTEFORCE_MAX_POINTS {
        return Err(Error::Unsupported(format!(
            "brute force limited to n <= {BRUTEFORCE_MAX_POINTS}, got {n}"
        )));
    }
    if !source.is_uniform() || !target.is_uniform() {
        return Err(Error::Unsupported(
            "brute force needs uniform weights".into(),
        ));
    }
    if cost.dim() != (n, n) {
        return Err(Error::Contract(format!(
            "cost shape {:?} does not match {n}x{n}",
            cost.dim()
        )));
    }
    let c = cost.entries();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (total, perm) = best.expect("n >= 1 yields at least one permutation");
    let w = 1.0 / n as f64;
    let mut gamma = Array2::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        gamma[[i, j]] = w;
    }
    let value = total * w;
    let plan = TransportPlan {
        gamma,
        dual_f: Array1::zeros(n),
        dual_g: Array1::zeros(n),
        value_cost: value,
        value_regularized: value,
        epsilon: 0.0,
        iterations_used: 0,
        converged: true,
        row_residual: 0.0,
        col_residual: 0.0,
    };
    Ok((plan, value))
}

pub fn sinkhorn(
    cost: &CostMatrix,
    source: &DiscreteDistribution,
    target: &DiscreteDistribution,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    sinkhorn_weights(cost.entries(), source.weights(), target.weights(), config)
}

/// Sinkhorn on raw cost entries and marginal weight vectors.
///
/// Returns a plan with `converged = false` when the iteration cap is hit;
/// only a non-finite plain-domain scaling is an error.
pub fn sinkhorn_weights(
    cost: ArrayView2<f64>,
    p: ArrayView1<f64>,
    q: ArrayView1<f64>,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    config.validate()?;
    let (n, m) = cost.dim();
    if n != p.len() || m != q.len() {
        return Err(Error::Contract(format!(
            "cost shape ({n}, {m}) does not match marginals ({}, {})",
            p.len(),
            q.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::Contract("empty transport problem".into()));
    }
    let eps = config.epsilon.resolve(cost);
    let (log_u, log_v, iterations) = if config.log_domain {
        scale_log_domain(cost, p, q, eps, config)
    } else {
        scale_kernel(cost, p, q, eps, config)?
    };
    finish_plan(cost, p, q, eps, log_u, log_v, iterations, config)
}

/// Log-potentials `a = f/ε`, `b = g/ε` by alternating log-sum-exp updates.
///
/// The potentials are warm-started by ε-annealing: ε is halved from the
/// largest cost down to the target, and each intermediate stage is iterated
/// to a loose tolerance before moving on. Without it, kernels with near-zero
/// entries converge only sublinearly. Within a stage the f-iterates are
/// Anderson-accelerated.
fn scale_log_domain(
    cost: ArrayView2<f64>,
    p: ArrayView1<f64>,
    q: ArrayView1<f64>,
    eps: f64,
    config: &SinkhornConfig,
) -> (Array1<f64>, Array1<f64>, usize) {
    let (n, m) = cost.dim();
    let mut state = LogState {
        log_p: p.mapv(f64::ln),
        log_q: q.mapv(f64::ln),
        f: Array1::zeros(n),
        g: Array1::zeros(m),
        row_lse: Array1::zeros(n),
        col_lse: Array1::zeros(m),
        col_max: Array1::zeros(m),
        iterations: 0,
    };
    let tol = STOP_FRACTION * config.marginal_tolerance;
    let c_max = cost.fold(0.0f64, |acc, &c| acc.max(c));
    let stages = (c_max / eps).log2().ceil().max(0.0) as usize;
    // intermediate stages share a quarter of the budget so a stage that
    // stalls cannot starve the final one
    let stage_budget = config.max_iterations / (4 * stages.max(1));
    let stage_tol = tol.max(ANNEAL_TOLERANCE);
    let mut stage = 0.5 * c_max;
    // the final stage always gets at least one iteration
    while stage > eps && state.iterations + 1 < config.max_iterations {
        let cap = (state.iterations + stage_budget.max(1)).min(config.max_iterations - 1);
        state.run(cost, p, stage, stage_tol, cap);
        stage *= 0.5;
    }
    state.run(cost, p, eps, tol, config.max_iterations);
    let inv = 1.0 / eps;
    (state.f * inv, state.g * inv, state.iterations)
}

struct LogState {
    log_p: Array1<f64>,
    log_q: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    row_lse: Array1<f64>,
    col_lse: Array1<f64>,
    col_max: Array1<f64>,
    iterations: usize,
}

impl LogState {
    /// Iterate at a fixed ε until the row residual drops to `tol` or the
    /// global iteration cap is reached. Every iteration updates g from f and
    /// then f from g, so on exit the column marginals are exact.
    fn run(&mut self, cost: ArrayView2<f64>, p: ArrayView1<f64>, eps: f64, tol: f64, cap: usize) {
        let inv = 1.0 / eps;
        let mut accel = Anderson::new(ANDERSON_DEPTH);
        let mut last_residual = f64::INFINITY;
        let mut next_f = Array1::zeros(self.f.len());
        loop {
            col_log_sums_into(cost, &self.f, inv, &mut self.col_max, &mut self.col_lse);
            update_potential(&mut self.g, &self.log_q, &self.col_lse, eps);
            self.iterations += 1;
            row_log_sums(cost, &self.g, inv, &mut self.row_lse);
            let residual = (0..p.len())
                .map(|i| ((self.f[i] * inv + self.row_lse[i]).exp() - p[i]).abs())
                .fold(0.0, f64::max);
            if residual <= tol || self.iterations >= cap {
                break;
            }
            update_potential(&mut next_f, &self.log_p, &self.row_lse, eps);
            if residual > last_residual {
                accel.reset();
            }
            last_residual = residual;
            self.f = accel.step(&self.f, &next_f);
        }
    }
}

/// History length of the Anderson acceleration.
const ANDERSON_DEPTH: usize = 5;

/// Anderson acceleration of the fixed-point map `f ↦ G(f)` (one Sinkhorn
/// sweep). Plain Sinkhorn stalls when the plan nearly splits into blocks,
/// e.g. for clustered features with unequal cluster masses; the slow mode is
/// low-dimensional and extrapolation removes it.
struct Anderson {
    depth: usize,
    prev: Option<(Array1<f64>, Array1<f64>)>,
    d_residual: std::collections::VecDeque<Array1<f64>>,
    d_image: std::collections::VecDeque<Array1<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            prev: None,
            d_residual: Default::default(),
            d_image: Default::default(),
        }
    }

    fn reset(&mut self) {
        self.prev = None;
        self.d_residual.clear();
        self.d_image.clear();
    }

    /// Next iterate from the current point `x` and its image `gx = G(x)`.
    fn step(&mut self, x: &Array1<f64>, gx: &Array1<f64>) -> Array1<f64> {
        let r = gx - x;
        if let Some((prev_r, prev_gx)) = self.prev.take() {
            if self.d_residual.len() == self.depth {
                self.d_residual.pop_front();
                self.d_image.pop_front();
            }
            self.d_residual.push_back(&r - &prev_r);
            self.d_image.push_back(gx - &prev_gx);
        }
        self.prev = Some((r.clone(), gx.clone()));
        let k = self.d_residual.len();
        if k == 0 {
            return gx.clone();
        }
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for a in 0..k {
            for b in 0..=a {
                let v = self.d_residual[a].dot(&self.d_residual[b]);
                gram[a][b] = v;
                gram[b][a] = v;
            }
            rhs[a] = self.d_residual[a].dot(&r);
        }
        let ridge = 1e-12 * (0..k).map(|a| gram[a][a]).fold(0.0, f64::max);
        for (a, row) in gram.iter_mut().enumerate() {
            row[a] += ridge;
        }
        let Some(gamma) = solve_small(gram, rhs) else {
            self.reset();
            return gx.clone();
        };
        let mut out = gx.clone();
        for (gm, dg) in gamma.iter().zip(&self.d_image) {
            out.scaled_add(-gm, dg);
        }
        if out.iter().all(|v| v.is_finite()) {
            out
        } else {
            self.reset();
            gx.clone()
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[pivot][col].abs() > 0.0) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `out_i = LSE_j((g_j − C_ij)·inv)`.
fn row_log_sums(cost: ArrayView2<f64>, g: &Array1<f64>, inv: f64, out: &mut Array1<f64>) {
    for (i, row) in cost.outer_iter().enumerate() {
        out[i] = log_sum_exp(row.iter().zip(g.iter()).map(|(c, gj)| (gj - c) * inv));
    }
}

/// `out_j = LSE_i((f_i − C_ij)·inv)`, with `max` as scratch space.
fn col_log_sums_into(
    cost: ArrayView2<f64>,
    f: &Array1<f64>,
    inv: f64,
    max: &mut Array1<f64>,
    out: &mut Array1<f64>,
) {
    max.fill(f64::NEG_INFINITY);
    for (row, fi) in cost.outer_iter().zip(f.iter()) {
        for (mx, c) in max.iter_mut().zip(row.iter()) {
            *mx = mx.max((fi - c) * inv);
        }
    }
    out.fill(0.0);
    for (row, fi) in cost.outer_iter().zip(f.iter()) {
        for ((s, c), mx) in out.iter_mut().zip(row.iter()).zip(max.iter()) {
            if mx.is_finite() {
                *s += ((fi - c) * inv - mx).exp();
            }
        }
    }
    for (s, mx) in out.iter_mut().zip(max.iter()) {
        *s = if mx.is_finite() { mx + s.ln() } else { *mx };
    }
}

/// `potential = ε·(log_w − lse)`.
fn update_potential(potential: &mut Array1<f64>, log_w: &Array1<f64>, lse: &Array1<f64>, eps: f64) {
    for ((x, lw), l) in potential.iter_mut().zip(log_w.iter()).zip(lse.iter()) {
        *x = eps * (lw - l);
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Plain matrix scaling on the Gibbs kernel `exp(−C/ε)`.
fn scale_kernel(
    cost: ArrayView2<f64>,
    p: ArrayView1<f64>,
    q: ArrayView1<f64>,
    eps: f64,
    config: &SinkhornConfig,
) -> Result<(Array1<f64>, Array1<f64>, usize)> {
    let (n, m) = cost.dim();
    let kernel = cost.mapv(|c| (-c / eps).exp());
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(m);
    let mut iterations = 0;
    loop {
        let kv = kernel.dot(&v);
        if iterations > 0 {
            let residual = (0..n)
                .map(|i| (u[i] * kv[i] - p[i]).abs())
                .fold(0.0, f64::max);
            if residual <= STOP_FRACTION * config.marginal_tolerance
                || iterations >= config.max_iterations
            {
                break;
            }
        }
        u = &p / &kv;
        let ktu = kernel.t().dot(&u);
        v = &q / &ktu;
        iterations += 1;
        let bad = |x: &f64| !x.is_finite();
        if u.iter().any(bad) || v.iter().any(bad) {
            return Err(Error::NumericOverflow {
                iteration: iterations,
            });
        }
    }
    Ok((u.mapv(f64::ln), v.mapv(f64::ln), iterations))
}

#[allow(clippy::too_many_arguments)]
fn finish_plan(
    cost: ArrayView2<f64>,
    p: ArrayView1<f64>,
    q: ArrayView1<f64>,
    eps: f64,
    a: Array1<f64>,
    b: Array1<f64>,
    iterations: usize,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    let mut gamma = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            gamma[[i, j]] = (a[i] + b[j] - cost[[i, j]] / eps).exp();
        }
    }
    let value_cost = (&gamma * &cost).sum();
    let h = entropy(gamma.view())?;
    let (row_residual, col_residual) = marginal_residual_weights(gamma.view(), p, q)?;
    let converged =
        row_residual <= config.marginal_tolerance && col_residual <= config.marginal_tolerance;
    Ok(TransportPlan {
        gamma,
        dual_f: a * eps,
        dual_g: b * eps,
        value_cost,
        value_regularized: value_cost - eps * h,
        epsilon: eps,
        iterations_used: iterations,
        converged,
        row_residual,
        col_residual,
    })
}

/// Entropic OT value between two uniform point clouds and its gradients.
#[derive(Debug, Clone)]
pub struct OtValueGrads {
    /// `value_regularized` of the converged plan.
    pub value: f64,
    pub source_grads: Array2<f64>,
    pub target_grads: Array2<f64>,
    pub plan: TransportPlan,
}

/// Entropic OT loss between uniform measures on `source_points` and
/// `target_points`, with gradients with respect to every coordinate.
///
/// Gradients follow from `∂value/∂C_ij = Γ_ij` at the regularized optimum,
/// chained through the ground cost. A cost-relative ε is resolved once and
/// held fixed, so it contributes no gradient.
pub fn ot_value_and_point_grads(
    source_points: ArrayView2<f64>,
    target_points: ArrayView2<f64>,
    config: &SinkhornConfig,
    metric: Metric,
) -> Result<OtValueGrads> {
    let (ns, nt) = (source_points.nrows(), target_points.nrows());
    if ns == 0 || nt == 0 {
        return Err(Error::Contract("empty point set".into()));
    }
    let cost = pairwise_cost(source_points, target_points, metric)?;
    let p = Array1::from_elem(ns, 1.0 / ns as f64);
    let q = Array1::from_elem(nt, 1.0 / nt as f64);
    let plan = sinkhorn_weights(cost.view(), p.view(), q.view(), config)?;
    if !plan.converged {
        return Err(Error::NotConverged {
            iterations: plan.iterations_used,
            row_residual: plan.row_residual,
            col_residual: plan.col_residual,
        });
    }

    // dC_ij/dx_i = s·(x_i − y_j) with s = 2 (squared) or 1/‖x_i − y_j‖.
    let weights = match metric {
        Metric::SquaredEuclidean => plan.gamma.mapv(|g| 2.0 * g),
        Metric::Euclidean => {
            let mut w = plan.gamma.clone();
            w.zip_mut_with(&cost, |g, &d| *g /= d.max(COINCIDENT_POINT_GUARD));
            w
        }
    };
    let row_w = weights.sum_axis(Axis(1));
    let col_w = weights.sum_axis(Axis(0));
    let source_grads =
        &source_points * &row_w.insert_axis(Axis(1)) - weights.dot(&target_points);
    let target_grads =
        &target_points * &col_w.insert_axis(Axis(1)) - weights.t().dot(&source_points);

    Ok(OtValueGrads {
        value: plan.value_regularized,
        source_grads,
        target_grads,
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn uniform(points: Array2<f64>) -> DiscreteDistribution {
        DiscreteDistribution::uniform(points).unwrap()
    }

    #[test]
    fn cost_three_four_five() {
        let s = uniform(array![[0.0, 0.0]]);
        let t = uniform(array![[3.0, 4.0]]);
        let c = cost_matrix(&s, &t, Metric::Euclidean).unwrap();
        assert_eq!(c.entries(), array![[5.0]]);
    }

    #[test]
    fn cost_diagonal_zero_for_identical_sets() {
        let pts = array![[0.3, -1.2, 4.0], [2.5, 0.1, 0.0], [-7.0, 3.3, 1.0]];
        for metric in [Metric::Euclidean, Metric::SquaredEuclidean] {
            let d = uniform(pts.clone());
            let c = cost_matrix(&d, &d, metric).unwrap();
            for i in 0..3 {
                assert_eq!(c.entries()[[i, i]], 0.0);
            }
        }
    }

    #[test]
    fn squared_cost_small_case() {
        let s = uniform(array![[0.0, 0.0], [1.0, 0.0]]);
        let t = uniform(array![[0.0, 1.0], [2.0, 0.0]]);
        let c = cost_matrix(&s, &t, Metric::SquaredEuclidean).unwrap();
        // hand evaluation of |x - y|^2
        assert_eq!(c.entries(), array![[1.0, 4.0], [2.0, 1.0]]);
        let swapped = cost_matrix(&t, &s, Metric::SquaredEuclidean).unwrap();
        assert_eq!(swapped.entries(), c.entries().t());
    }

    #[test]
    fn cost_dimension_mismatch() {
        let s = uniform(array![[0.0, 0.0]]);
        let t = uniform(array![[0.0, 0.0, 1.0]]);
        assert!(matches!(
            cost_matrix(&s, &t, Metric::Euclidean),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(array![[1.0]], array![0.5]).is_err());
        assert!(DiscreteDistribution::new(array![[1.0], [2.0]], array![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(array![[f64::NAN]], array![1.0]).is_err());
        assert!(DiscreteDistribution::new(Array2::zeros((0, 2)), Array1::zeros(0)).is_err());
        assert!(DiscreteDistribution::new(array![[1.0], [2.0]], array![1.0, 0.0]).is_ok());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(array![[1.0]].view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            entropy(array![[0.25, 0.25], [0.25, 0.25]].view()).unwrap(),
            4f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            entropy(array![[0.5, 0.0], [0.0, 0.5]].view()).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
        assert!(matches!(
            entropy(array![[0.5, -0.1]].view()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bruteforce_examples() {
        let pts = |n: usize| uniform(Array2::zeros((n, 1)));
        let c = CostMatrix::from_entries(array![[0.0, 1.0], [1.0, 0.0]], Metric::Euclidean).unwrap();
        let (plan, v) = exact_ot_bruteforce(&c, &pts(2), &pts(2)).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(plan.gamma, array![[0.5, 0.0], [0.0, 0.5]]);

        let c = CostMatrix::from_entries(array![[2.0, 1.0], [1.0, 2.0]], Metric::Euclidean).unwrap();
        let (plan, v) = exact_ot_bruteforce(&c, &pts(2), &pts(2)).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(plan.gamma, array![[0.0, 0.5], [0.5, 0.0]]);

        let c = CostMatrix::from_entries(array![[7.0]], Metric::Euclidean).unwrap();
        assert_eq!(exact_ot_bruteforce(&c, &pts(1), &pts(1)).unwrap().1, 7.0);
    }

    #[test]
    fn bruteforce_rejects_unsupported() {
        let c = CostMatrix::from_entries(Array2::zeros((2, 3)), Metric::Euclidean).unwrap();
        let two = uniform(Array2::zeros((2, 1)));
        let three = uniform(Array2::zeros((3, 1)));
        assert!(matches!(
            exact_ot_bruteforce(&c, &two, &three),
            Err(Error::Unsupported(_))
        ));
        let skewed = DiscreteDistribution::new(Array2::zeros((2, 1)), array![0.3, 0.7]).unwrap();
        let c = CostMatrix::from_entries(Array2::zeros((2, 2)), Metric::Euclidean).unwrap();
        assert!(matches!(
            exact_ot_bruteforce(&c, &skewed, &two),
            Err(Error::Unsupported(_))
        ));
        let nine = uniform(Array2::zeros((9, 1)));
        let c = CostMatrix::from_entries(Array2::zeros((9, 9)), Metric::Euclidean).unwrap();
        assert!(matches!(
            exact_ot_bruteforce(&c, &nine, &nine),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn marginal_residual_examples() {
        let d = uniform(Array2::zeros((2, 1)));
        let zero = TransportPlan {
            gamma: Array2::zeros((2, 2)),
            dual_f: Array1::zeros(2),
            dual_g: Array1::zeros(2),
            value_cost: 0.0,
            value_regularized: 0.0,
            epsilon: 0.0,
            iterations_used: 0,
            converged: false,
            row_residual: 0.0,
            col_residual: 0.0,
        };
        assert_eq!(marginal_residual(&zero, &d, &d).unwrap(), (0.5, 0.5));

        let perm = TransportPlan {
            gamma: array![[0.0, 0.5], [0.5, 0.0]],
            ..zero.clone()
        };
        assert_eq!(marginal_residual(&perm, &d, &d).unwrap(), (0.0, 0.0));

        let p = array![0.2, 0.3, 0.5];
        let q = array![0.6, 0.4];
        let outer = p.clone().insert_axis(Axis(1)) * q.clone().insert_axis(Axis(0));
        let (r, c) = marginal_residual_weights(outer.view(), p.view(), q.view()).unwrap();
        assert!(r <= 1e-12 && c <= 1e-12);

        assert!(marginal_residual_weights(outer.view(), q.view(), p.view()).is_err());
    }

    #[test]
    fn self_transport_is_nearly_free() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let d = uniform(pts);
        let c = cost_matrix(&d, &d, Metric::Euclidean).unwrap();
        let config = SinkhornConfig {
            max_iterations: 10_000,
            ..SinkhornConfig::with_epsilon(0.01)
        };
        let plan = sinkhorn(&c, &d, &d, &config).unwrap();
        assert!(plan.converged);
        let off: Vec<f64> = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| c.entries()[[i, j]])
            .collect();
        let mean_off = off.iter().sum::<f64>() / off.len() as f64;
        assert!(plan.value_cost <= 0.05 * mean_off);
        let (r, col) = marginal_residual(&plan, &d, &d).unwrap();
        assert!(r <= 1e-6 && col <= 1e-6);
    }

    #[test]
    fn large_epsilon_gives_independent_coupling() {
        let s = DiscreteDistribution::new(
            array![[0.0, 0.0], [1.0, 0.5], [2.0, -1.0]],
            array![0.2, 0.5, 0.3],
        )
        .unwrap();
        let t = DiscreteDistribution::new(array![[0.5, 0.5], [-1.0, 2.0]], array![0.35, 0.65])
            .unwrap();
        let c = cost_matrix(&s, &t, Metric::Euclidean).unwrap();
        let max_c = c.entries().iter().cloned().fold(0.0, f64::max);
        let plan = sinkhorn(&c, &s, &t, &SinkhornConfig::with_epsilon(100.0 * max_c)).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let outer = s.weights()[i] * t.weights()[j];
                assert_abs_diff_eq!(plan.gamma[[i, j]], outer, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn kernel_and_log_domain_agree() {
        let s = uniform(array![[0.0, 0.0], [1.0, 0.2], [0.4, 1.5]]);
        let t = uniform(array![[0.1, 0.3], [1.2, -0.5], [2.0, 1.0]]);
        let c = cost_matrix(&s, &t, Metric::Euclidean).unwrap();
        let log_cfg = SinkhornConfig {
            marginal_tolerance: 1e-12,
            max_iterations: 100_000,
            ..SinkhornConfig::with_epsilon(0.1)
        };
        let plain_cfg = SinkhornConfig {
            log_domain: false,
            ..log_cfg
        };
        let a = sinkhorn(&c, &s, &t, &log_cfg).unwrap();
        let b = sinkhorn(&c, &s, &t, &plain_cfg).unwrap();
        assert!(a.converged && b.converged);
        for (x, y) in a.gamma.iter().zip(b.gamma.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(a.value_regularized, b.value_regularized, epsilon = 1e-10);
    }

    #[test]
    fn plain_domain_overflow_is_reported() {
        let s = uniform(array![[0.0], [1000.0]]);
        let t = uniform(array![[500.0], [2000.0]]);
        let c = cost_matrix(&s, &t, Metric::Euclidean).unwrap();
        let cfg = SinkhornConfig {
            log_domain: false,
            ..SinkhornConfig::with_epsilon(1e-3)
        };
        assert!(matches!(
            sinkhorn(&c, &s, &t, &cfg),
            Err(Error::NumericOverflow { .. })
        ));
        let cfg = SinkhornConfig {
            log_domain: true,
            ..cfg
        };
        assert!(sinkhorn(&c, &s, &t, &cfg).unwrap().converged);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let s = uniform(array![[0.0], [1.0], [3.0]]);
        let t = uniform(array![[0.5], [2.0], [2.5]]);
        let c = cost_matrix(&s, &t, Metric::Euclidean).unwrap();
        let cfg = SinkhornConfig {
            max_iterations: 1,
            marginal_tolerance: 1e-14,
            ..SinkhornConfig::with_epsilon(0.01)
        };
        let plan = sinkhorn(&c, &s, &t, &cfg).unwrap();
        assert!(!plan.converged);
        assert_eq!(plan.iterations_used, 1);
        let err = ot_value_and_point_grads(s.points(), t.points(), &cfg, Metric::Euclidean)
            .unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 1, .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = array![[1.0]];
        let w = array![1.0];
        for cfg in [
            SinkhornConfig::with_epsilon(0.0),
            SinkhornConfig {
                marginal_tolerance: 0.0,
                ..SinkhornConfig::default()
            },
        ] {
            assert!(matches!(
                sinkhorn_weights(c.view(), w.view(), w.view(), &cfg),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn self_gradients_vanish() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0], [-1.0, -1.0]];
        let cfg = SinkhornConfig {
            max_iterations: 50_000,
            marginal_tolerance: 1e-10,
            ..SinkhornConfig::with_epsilon(0.01)
        };
        let out =
            ot_value_and_point_grads(pts.view(), pts.view(), &cfg, Metric::Euclidean).unwrap();
        let max = out
            .source_grads
            .iter()
            .chain(out.target_grads.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(max < 1e-6, "max gradient {max}");
    }

    #[test]
    fn relative_epsilon_tracks_mean_cost() {
        let c = array![[1.0, 3.0], [2.0, 2.0]];
        assert_abs_diff_eq!(Epsilon::MeanCostRelative(0.05).resolve(c.view()), 0.1);
        assert_eq!(Epsilon::MeanCostRelative(0.05).resolve(Array2::zeros((2, 2)).view()), 0.05);
        assert_eq!(Epsilon::Absolute(2.0).resolve(c.view()), 2.0);
    }
}
