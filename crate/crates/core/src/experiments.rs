//! Monte Carlo replication harness: the exact reference solution,
//! pointwise and uniform bias, variance and MSE, convergence-rate fits,
//! normality diagnostics and smoothing sweeps.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bellman::{Continuation, Formulation};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sampling::{draw_conditional, draw_marginal_uniform, ShockSet};
use crate::sieve::{DesignNodes, Family, SieveSpace};
use crate::solver::{solve_self_approx, solve_sieve, SieveSolution, SolverConfig, ValueApprox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Sieve,
    SelfApprox,
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodKind::Sieve => "sieve",
            MethodKind::SelfApprox => "self-approx",
        })
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sieve" => Ok(MethodKind::Sieve),
            "self-approx" => Ok(MethodKind::SelfApprox),
            other => Err(Error::config("method.kind", format!("unknown method `{other}` (sieve, self-approx)"))),
        }
    }
}

/// How one approximate solution is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub basis: Family,
    /// Basis functions per dimension.
    pub j: usize,
    /// Design points per dimension; `j` when absent.
    pub m: Option<usize>,
    pub nodes: DesignNodes,
    pub formulation: Formulation,
    /// State draws `N`.
    pub n: usize,
    /// Taste-shock draws per state; the closed form when absent.
    pub n_eps: Option<usize>,
    /// Smoothing parameter for simulated shocks.
    pub lambda: f64,
    /// Truncation point of the uniform marginal sampler.
    pub z_max: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            kind: MethodKind::Sieve,
            basis: Family::Chebyshev,
            j: 10,
            m: None,
            nodes: DesignNodes::default(),
            formulation: Formulation::Integrated,
            n: 500,
            n_eps: None,
            lambda: 0.0,
            z_max: 1000.0,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.j == 0 {
            return Err(Error::config("method.j", "need at least one basis function"));
        }
        if self.m.is_some_and(|m| m < self.j) {
            return Err(Error::config("method.m", "fewer design points than basis functions"));
        }
        if self.n == 0 {
            return Err(Error::config("method.n", "need at least one draw"));
        }
        if self.n_eps == Some(0) {
            return Err(Error::config("method.n_eps", "need at least one taste-shock draw"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("method.lambda", "smoothing parameter must be finite and >= 0"));
        }
        if !(self.z_max > 0.0) {
            return Err(Error::config("method.z_max", "truncation point must be > 0"));
        }
        if let Family::Bspline { order } = self.basis {
            if self.j < order + 1 {
                return Err(Error::config("method.j", format!("order-{order} B-splines need j >= {}", order + 1)));
            }
        }
        if self.kind == MethodKind::SelfApprox && spec.d_z != 1 {
            return Err(Error::config("method.kind", "the self-approximating method is implemented for d_z = 1"));
        }
        Ok(())
    }

    pub fn space(&self, spec: &ModelSpec) -> Result<SieveSpace> {
        SieveSpace::with_design_size(
            self.basis,
            self.j,
            spec.d_z,
            spec.z_min,
            spec.z_max_domain,
            self.m.unwrap_or(self.j),
            self.nodes,
        )
    }

    /// The smoothing parameter actually applied.
    pub fn effective_lambda(&self, spec: &ModelSpec) -> f64 {
        if self.n_eps.is_some() {
            self.lambda
        } else {
            spec.lambda_ev
        }
    }

    pub fn shocks(&self, spec: &ModelSpec, seed: u64, replication: u64) -> Result<ShockSet> {
        match self.n_eps {
            Some(n_eps) => ShockSet::simulated(spec, n_eps, self.lambda, seed, replication),
            None => Ok(ShockSet::analytic(spec)),
        }
    }
}

/// Settings of the exact reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Chebyshev terms of the univariate reference.
    pub k: usize,
    /// Chebyshev terms per dimension of a non-additive bivariate reference.
    pub j_joint: usize,
    pub quadrature_nodes: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { k: 60, j_joint: 20, quadrature_nodes: crate::bellman::DEFAULT_QUADRATURE_NODES }
    }
}

/// Replication settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub replications: usize,
    pub n_schedule: Vec<usize>,
    /// Smoothing sweep; empty means the method's own `lambda`.
    pub lambdas: Vec<f64>,
    /// Evaluation points (total; a square lattice for `d_z = 2`).
    pub grid_size: usize,
    pub seed: u64,
    /// States at which replication values are kept for normality checks.
    pub normality_points: Vec<f64>,
    pub max_failure_rate: f64,
    pub reference: ReferenceConfig,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            replications: 200,
            n_schedule: vec![100, 200, 500, 1000, 2000],
            lambdas: Vec::new(),
            grid_size: 500,
            seed: 0,
            normality_points: Vec::new(),
            max_failure_rate: 0.01,
            reference: ReferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub method: MethodConfig,
    pub solver: SolverConfig,
    pub experiment: ExperimentSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.method.validate(&self.model)?;
        self.solver.validate()?;
        let e = &self.experiment;
        if e.replications < 2 {
            return Err(Error::config("experiment.replications", "need at least 2 replications"));
        }
        if e.n_schedule.is_empty() || e.n_schedule.contains(&0) {
            return Err(Error::config("experiment.n_schedule", "need a nonempty list of positive draw counts"));
        }
        if e.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("experiment.lambdas", "smoothing parameters must be finite and >= 0"));
        }
        if !e.lambdas.is_empty() && self.method.n_eps.is_none() {
            return Err(Error::config("experiment.lambdas", "a smoothing sweep needs simulated taste shocks (method.n_eps)"));
        }
        if e.grid_size < 2 {
            return Err(Error::config("experiment.grid_size", "need at least 2 evaluation points"));
        }
        if !(0.0..=1.0).contains(&e.max_failure_rate) {
            return Err(Error::config("experiment.max_failure_rate", "must lie in [0, 1]"));
        }
        if self.model.d_z > 2 {
            return Err(Error::config("model.d_z", "experiments support d_z = 1 or 2"));
        }
        Ok(())
    }
}

/// The evaluation grid: `size` uniform points on the domain, or a
/// `ceil(sqrt(size))`-per-side lattice in two dimensions.
pub fn evaluation_grid(spec: &ModelSpec, size: usize) -> Vec<Vec<f64>> {
    let line = |n: usize| -> Vec<f64> {
        (0..n).map(|i| spec.z_min + (spec.z_max_domain - spec.z_min) * i as f64 / (n - 1) as f64).collect()
    };
    match spec.d_z {
        1 => line(size).into_iter().map(|z| vec![z]).collect(),
        _ => {
            let side = (size as f64).sqrt().ceil() as usize;
            let pts = line(side.max(2));
            pts.iter().flat_map(|&a| pts.iter().map(move |&b| vec![a, b])).collect()
        }
    }
}

/// A high-accuracy solution computed with quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExactReference {
    Univariate { solution: SieveSolution },
    /// Bivariate additive model: the sum of two univariate solutions.
    Additive { solution: SieveSolution },
    Joint { solution: SieveSolution },
}

impl ExactReference {
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            ExactReference::Univariate { solution } | ExactReference::Joint { solution } => solution.value(z),
            ExactReference::Additive { solution } => z.iter().map(|&x| solution.value(&[x])).sum(),
        }
    }

    pub fn solution(&self) -> &SieveSolution {
        match self {
            ExactReference::Univariate { solution } | ExactReference::Additive { solution } | ExactReference::Joint { solution } => {
                solution
            }
        }
    }

    pub fn residual(&self) -> f64 {
        self.solution().residual
    }
}

fn quadrature_solve(spec: &ModelSpec, j: usize, reference: &ReferenceConfig) -> Result<SieveSolution> {
    let space = SieveSpace::new(Family::Chebyshev, j, spec.d_z, spec.z_min, spec.z_max_domain)?;
    let cont = Continuation::quadrature(spec, reference.quadrature_nodes)?;
    solve_sieve(spec, &space, ShockSet::analytic(spec), &cont, Formulation::Integrated, &SolverConfig::default(), None)
}

/// Chebyshev sieve with quadrature continuation, solved to machine
/// precision. Deterministic.
pub fn exact_reference(spec: &ModelSpec, reference: &ReferenceConfig) -> Result<ExactReference> {
    spec.validate()?;
    match (spec.d_z, spec.kappa == 0.0) {
        (1, _) => Ok(ExactReference::Univariate { solution: quadrature_solve(spec, reference.k, reference)? }),
        (2, true) => {
            let uni = ModelSpec { d_z: 1, ..spec.clone() };
            Ok(ExactReference::Additive { solution: quadrature_solve(&uni, reference.k, reference)? })
        }
        (2, false) => Ok(ExactReference::Joint { solution: quadrature_solve(spec, reference.j_joint, reference)? }),
        _ => Err(Error::config("model.d_z", "the exact reference supports d_z = 1 or 2")),
    }
}

/// One approximate solution from replication `replication` of `seed`.
pub fn solve_once(
    spec: &ModelSpec,
    method: &MethodConfig,
    solver: &SolverConfig,
    seed: u64,
    replication: u64,
) -> Result<ValueApprox> {
    let shocks = method.shocks(spec, seed, replication)?;
    match method.kind {
        MethodKind::Sieve => {
            let space = method.space(spec)?;
            let draws = draw_conditional(spec, &space.design, method.n, seed, replication)?;
            let sol = solve_sieve(spec, &space, shocks, &Continuation::Draws(draws), method.formulation, solver, None)?;
            Ok(ValueApprox::Sieve(sol))
        }
        MethodKind::SelfApprox => {
            let draws = draw_marginal_uniform(method.n, 1, method.z_max, seed, replication)?;
            Ok(ValueApprox::SelfApprox(solve_self_approx(spec, draws, shocks, method.formulation, solver, None)?))
        }
    }
}

/// Values of every successful replication at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Replications {
    /// `values[s][p]`.
    pub values: Vec<Vec<f64>>,
    pub failed: usize,
    pub wall_time_s: f64,
}

/// Runs `S` independent replications in parallel and evaluates each
/// solution at `points`. Fails if more than `max_failure_rate` of them fail.
pub fn replicate(
    spec: &ModelSpec,
    method: &MethodConfig,
    solver: &SolverConfig,
    settings: &ExperimentSettings,
    points: &[Vec<f64>],
) -> Result<Replications> {
    let start = Instant::now();
    let total = settings.replications;
    let outcomes: Vec<Result<Vec<f64>>> = (0..total as u64)
        .into_par_iter()
        .map(|rep| {
            let sol = solve_once(spec, method, solver, settings.seed, rep)?;
            points.iter().map(|z| sol.value(z)).collect()
        })
        .collect();
    let mut values = Vec::with_capacity(total);
    let mut failed = 0;
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(v) => values.push(v),
            Err(e) => {
                warn!("replication {rep} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed as f64 > settings.max_failure_rate * total as f64 || values.is_empty() {
        return Err(Error::ReplicationFailures { failed, total });
    }
    Ok(Replications { values, failed, wall_time_s: start.elapsed().as_secs_f64() })
}

/// Pointwise and uniform error statistics against the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub bias: Vec<f64>,
    pub var: Vec<f64>,
    pub mse: Vec<f64>,
    pub sup_bias: f64,
    pub sup_sd: f64,
    pub sup_mse: f64,
}

/// `Bias = mean - v0`, `Var` the mean squared deviation, `MSE = Bias² + Var`.
pub fn summarize(values: &[Vec<f64>], reference: &[f64]) -> Result<ErrorSummary> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no replication values".into()));
    }
    let s = values.len() as f64;
    let p = reference.len();
    let mut bias = vec![0.0; p];
    let mut var = vec![0.0; p];
    for i in 0..p {
        let mean = values.iter().map(|v| v[i]).sum::<f64>() / s;
        var[i] = values.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / s;
        bias[i] = mean - reference[i];
    }
    let mse: Vec<f64> = bias.iter().zip(&var).map(|(b, v)| b * b + v).collect();
    let sup = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ErrorSummary {
        sup_bias: sup(&bias),
        sup_sd: sup(&var).sqrt(),
        sup_mse: sup(&mse),
        bias,
        var,
        mse,
    })
}

/// One row of the experiment records table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: MethodKind,
    /// Sieve dimension; empty for the self-approximating method.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    pub sigma_z: f64,
    #[serde(rename = "S")]
    pub s: usize,
    pub sup_bias: f64,
    pub sup_sd: f64,
    pub sup_mse: f64,
    pub wall_time_s: f64,
}

/// Pointwise statistics for one `(N, λ)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseResult {
    pub n: usize,
    pub lambda: f64,
    pub summary: ErrorSummary,
}

/// `statistic ≈ exp(alpha + rho ln N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub statistic: String,
    pub alpha: f64,
    pub rho: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance of the standardized values to N(0,1).
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub z: f64,
    pub n: usize,
    pub lambda: f64,
    pub stats: NormalityStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub grid: Vec<Vec<f64>>,
    pub reference_values: Vec<f64>,
    pub records: Vec<ExperimentRecord>,
    pub pointwise: Vec<PointwiseResult>,
    pub rates: Vec<RateFit>,
    pub normality: Vec<NormalityResult>,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Ordinary least squares of `ln statistic` on `ln N`; non-positive
/// statistics are dropped.
pub fn fit_rate(statistic: &str, records: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|(n, y)| {
            let keep = *y > 0.0 && *n > 0.0 && y.is_finite();
            if !keep {
                warn!("dropping non-positive {statistic} = {y} at N = {n} from the rate fit");
            }
            keep
        })
        .map(|(n, y)| (n.ln(), y.ln()))
        .collect();
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!("{statistic}: a rate fit needs at least 3 distinct positive N values")));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let rho = sxy / sxx;
    let alpha = my - rho * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - alpha - rho * p.0).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit { statistic: statistic.to_string(), alpha, rho, r_squared })
}

/// Moments and KS distance of the standardized sample.
pub fn normality_diagnostic(values: &[f64]) -> Result<NormalityStats> {
    let n = values.len();
    if n < 100 {
        return Err(Error::InsufficientData(format!("normality diagnostics need at least 100 values, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if !(m2 > 0.0) {
        return Err(Error::InsufficientData("replication values have zero variance".into()));
    }
    let sd = m2.sqrt();
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    let skewness = z.iter().map(|x| x.powi(3)).sum::<f64>() / nf;
    let excess_kurtosis = z.iter().map(|x| x.powi(4)).sum::<f64>() / nf - 3.0;
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let ks = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / nf).abs().max(((i + 1) as f64 / nf - c).abs())
        })
        .fold(0.0, f64::max);
    Ok(NormalityStats { n, mean, sd, skewness, excess_kurtosis, ks })
}

fn record(cfg: &ExperimentConfig, n: usize, lambda: f64, s: usize, summary: &ErrorSummary, wall_time_s: f64) -> ExperimentRecord {
    ExperimentRecord {
        method: cfg.method.kind,
        k: (cfg.method.kind == MethodKind::Sieve).then(|| cfg.method.j.pow(cfg.model.d_z as u32)),
        n,
        lambda,
        sigma_z: cfg.model.sigma_z,
        s,
        sup_bias: summary.sup_bias,
        sup_sd: summary.sup_sd,
        sup_mse: summary.sup_mse,
        wall_time_s,
    }
}

/// Replications over the `N` schedule and the smoothing sweep, with rate
/// fits when the schedule has at least three sizes and a single `λ`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let spec = &cfg.model;
    let settings = &cfg.experiment;
    let reference = exact_reference(spec, &settings.reference)?;
    let grid = evaluation_grid(spec, settings.grid_size);
    let reference_values: Vec<f64> = grid.iter().map(|z| reference.value(z)).collect();
    let probes: Vec<Vec<f64>> = settings.normality_points.iter().map(|&z| vec![z; spec.d_z]).collect();
    let mut points = grid.clone();
    points.extend(probes.iter().cloned());

    let lambdas = if settings.lambdas.is_empty() { vec![cfg.method.lambda] } else { settings.lambdas.clone() };
    let mut records = Vec::new();
    let mut pointwise = Vec::new();
    let mut normality = Vec::new();
    for &n in &settings.n_schedule {
        for &lambda in &lambdas {
            let method = MethodConfig { n, lambda, ..cfg.method.clone() };
            let effective = method.effective_lambda(spec);
            let reps = replicate(spec, &method, &cfg.solver, settings, &points)?;
            let on_grid: Vec<Vec<f64>> = reps.values.iter().map(|v| v[..grid.len()].to_vec()).collect();
            let summary = summarize(&on_grid, &reference_values)?;
            info!(
                "{} N={n} lambda={effective}: sup bias {:.4e}, sup sd {:.4e}, sup mse {:.4e}",
                method.kind, summary.sup_bias, summary.sup_sd, summary.sup_mse
            );
            records.push(record(cfg, n, effective, reps.values.len(), &summary, reps.wall_time_s));
            for (p, &z) in settings.normality_points.iter().enumerate() {
                let vals: Vec<f64> = reps.values.iter().map(|v| v[grid.len() + p]).collect();
                normality.push(NormalityResult { z, n, lambda: effective, stats: normality_diagnostic(&vals)? });
            }
            pointwise.push(PointwiseResult { n, lambda: effective, summary });
        }
    }

    let mut rates = Vec::new();
    if lambdas.len() == 1 {
        let by_n = |f: fn(&ExperimentRecord) -> f64| records.iter().map(|r| (r.n as f64, f(r))).collect::<Vec<_>>();
        for (name, data) in [("sup_bias", by_n(|r| r.sup_bias)), ("sup_sd", by_n(|r| r.sup_sd)), ("sup_mse", by_n(|r| r.sup_mse))] {
            match fit_rate(name, &data) {
                Ok(fit) => rates.push(fit),
                Err(Error::InsufficientData(msg)) => info!("no rate fit: {msg}"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        grid,
        reference_values,
        records,
        pointwise,
        rates,
        normality,
        seed: settings.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// `(λ, ‖MSE‖_∞)` over `lambdas` at the method's `N`, with common random
/// numbers across `λ`.
pub fn smoothing_sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let cfg = ExperimentConfig {
        experiment: ExperimentSettings {
            n_schedule: vec![cfg.method.n],
            lambdas: lambdas.to_vec(),
            normality_points: Vec::new(),
            ..cfg.experiment.clone()
        },
        ..cfg.clone()
    };
    let result = run_experiment(&cfg)?;
    Ok(result.records.iter().map(|r| (r.lambda, r.sup_mse)).collect())
}

/// Tensor coefficients of a bivariate integrated sieve solution,
/// `table[j1][j2]` for the basis `p_{j1}(z1) p_{j2}(z2)`.
pub fn coefficient_report(solution: &SieveSolution) -> Result<Vec<Vec<f64>>> {
    if solution.space.d_z != 2 || solution.formulation != Formulation::Integrated {
        return Err(Error::domain("coefficient report needs a bivariate integrated sieve solution"));
    }
    let j = solution.space.j;
    Ok(solution.coef.chunks(j).map(|row| row.to_vec()).collect())
}
