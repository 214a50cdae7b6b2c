//! Successive approximation, Newton-Kantorovich and hybrid fixed-point
//! iterations, and the solved value-function types they produce.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman::{Continuation, ExpectedSieveMap, FixedPointMap, Formulation, IntegratedSieveMap, SelfApproxMap};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sampling::{DrawSet, ShockSet};
use crate::sieve::{SieveFunction, SieveSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sa,
    Nk,
    Hybrid,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" => Ok(Method::Sa),
            "nk" => Ok(Method::Nk),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(Error::config("solver.method", format!("unknown method `{other}` (sa, nk, hybrid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: Method,
    /// Sup-norm tolerance on `|x - T(x)|`.
    pub tol: f64,
    pub max_iter_sa: usize,
    pub max_iter_nk: usize,
    /// Hybrid switches to Newton once the SA residual falls below this...
    pub switch_residual: f64,
    /// ...or after this many SA iterations.
    pub switch_iterations: usize,
    /// Largest system solved with a dense factorization.
    pub memory_cap: usize,
    /// Consecutive residual increases treated as divergence.
    pub divergence_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Hybrid,
            tol: 1e-12,
            max_iter_sa: 100_000,
            max_iter_nk: 50,
            switch_residual: 1.0,
            switch_iterations: 20,
            memory_cap: 20_000,
            divergence_window: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol", "tolerance must be > 0"));
        }
        if self.max_iter_sa == 0 && self.method == Method::Sa {
            return Err(Error::config("solver.max_iter_sa", "must be >= 1"));
        }
        if self.divergence_window == 0 {
            return Err(Error::config("solver.divergence_window", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Sa,
    Nk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub method: Step,
    pub residual: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub x: Vec<f64>,
    pub residual: f64,
    pub sa_iterations: usize,
    pub nk_iterations: usize,
    pub log: Vec<IterRecord>,
}

struct Logger {
    start: Instant,
    log: Vec<IterRecord>,
}

impl Logger {
    fn new() -> Self {
        Self { start: Instant::now(), log: Vec::new() }
    }

    fn push(&mut self, method: Step, residual: f64) {
        let iter = self.log.len() + 1;
        let wall_time_ms = self.start.elapsed().as_secs_f64() * 1e3;
        debug!("{method:?} iteration {iter}: residual {residual:e}");
        self.log.push(IterRecord { iter, method, residual, wall_time_ms });
    }
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, |m, d| if d.is_nan() { f64::NAN } else { m.max(d) })
}

/// Successive approximation phase; stops on tolerance, on the hybrid switch
/// rule when `switch` is given, on divergence, or at the iteration cap.
fn sa_phase(
    map: &dyn FixedPointMap,
    mut x: Vec<f64>,
    cfg: &SolverConfig,
    logger: &mut Logger,
    switch: bool,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let mut prev = f64::INFINITY;
    let mut growth = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iter_sa {
        let next = map.apply(&x)?;
        residual = sup_diff(&next, &x);
        x = next;
        logger.push(Step::Sa, residual);
        if !residual.is_finite() {
            return Err(Error::Diverged { iteration: it, residual });
        }
        if residual <= cfg.tol {
            return Ok((x, residual, it, true));
        }
        if switch && (residual < cfg.switch_residual || it >= cfg.switch_iterations) {
            return Ok((x, residual, it, false));
        }
        growth = if residual > prev { growth + 1 } else { 0 };
        if growth >= cfg.divergence_window {
            return Err(Error::Diverged { iteration: it, residual });
        }
        prev = residual;
    }
    if switch {
        return Ok((x, residual, cfg.max_iter_sa, false));
    }
    Err(Error::MaxIterations { iterations: cfg.max_iter_sa, residual })
}

fn nk_phase(map: &dyn FixedPointMap, mut x: Vec<f64>, cfg: &SolverConfig, logger: &mut Logger) -> Result<(Vec<f64>, f64, usize)> {
    if !map.is_smooth() {
        return Err(Error::UnsupportedNonSmooth);
    }
    let n = map.dim();
    if n > cfg.memory_cap {
        return Err(Error::MemoryGuard { n, cap: cfg.memory_cap });
    }
    let mut steps = 0;
    loop {
        let tx = map.apply(&x)?;
        let residual = sup_diff(&x, &tx);
        if !residual.is_finite() {
            return Err(Error::Diverged { iteration: steps, residual });
        }
        if steps > 0 {
            logger.push(Step::Nk, residual);
        }
        if residual <= cfg.tol {
            return Ok((x, residual, steps));
        }
        if steps >= cfg.max_iter_nk {
            return Err(Error::MaxIterations { iterations: steps, residual });
        }
        let jac = map.jacobian(&x)?;
        let h = DMatrix::<f64>::identity(n, n) - jac;
        let rhs = DVector::from_iterator(n, x.iter().zip(&tx).map(|(a, b)| a - b));
        let delta = h.lu().solve(&rhs).ok_or(Error::SingularJacobian { iteration: steps + 1 })?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::SingularJacobian { iteration: steps + 1 });
        }
        for (xi, di) in x.iter_mut().zip(delta.iter()) {
            *xi -= di;
        }
        steps += 1;
    }
}

pub fn solve_sa(map: &dyn FixedPointMap, initial: Vec<f64>, cfg: &SolverConfig) -> Result<FixedPoint> {
    let mut logger = Logger::new();
    let (x, residual, sa_iterations, _) = sa_phase(map, initial, cfg, &mut logger, false)?;
    Ok(FixedPoint { x, residual, sa_iterations, nk_iterations: 0, log: logger.log })
}

/// Newton-Kantorovich: `x ← x − (I − T'(x))^{-1} (x − T(x))`.
pub fn solve_nk(map: &dyn FixedPointMap, initial: Vec<f64>, cfg: &SolverConfig) -> Result<FixedPoint> {
    let mut logger = Logger::new();
    let (x, residual, nk_iterations) = nk_phase(map, initial, cfg, &mut logger)?;
    Ok(FixedPoint { x, residual, sa_iterations: 0, nk_iterations, log: logger.log })
}

/// SA until the residual drops below `switch_residual` or `switch_iterations`
/// steps have been taken, then NK. Non-smooth maps stay on SA.
pub fn solve_hybrid(map: &dyn FixedPointMap, initial: Vec<f64>, cfg: &SolverConfig) -> Result<FixedPoint> {
    if !map.is_smooth() {
        warn!("map is not differentiable; hybrid solve continues with successive approximation only");
        return solve_sa(map, initial, cfg);
    }
    let mut logger = Logger::new();
    let (x, residual, sa_iterations, done) = sa_phase(map, initial, cfg, &mut logger, true)?;
    if done {
        return Ok(FixedPoint { x, residual, sa_iterations, nk_iterations: 0, log: logger.log });
    }
    let (x, residual, nk_iterations) = nk_phase(map, x, cfg, &mut logger)?;
    Ok(FixedPoint { x, residual, sa_iterations, nk_iterations, log: logger.log })
}

pub fn solve(map: &dyn FixedPointMap, initial: Vec<f64>, cfg: &SolverConfig) -> Result<FixedPoint> {
    cfg.validate()?;
    if initial.len() != map.dim() {
        return Err(Error::domain(format!("initial guess has {} entries, map needs {}", initial.len(), map.dim())));
    }
    match cfg.method {
        Method::Sa => solve_sa(map, initial, cfg),
        Method::Nk => solve_nk(map, initial, cfg),
        Method::Hybrid => solve_hybrid(map, initial, cfg),
    }
}

/// A solved sieve approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveSolution {
    pub spec: ModelSpec,
    pub shocks: ShockSet,
    pub space: SieveSpace,
    pub formulation: Formulation,
    /// `K` coefficients for `v`, or `K` per decision (decision-major) for `V`.
    pub coef: Vec<f64>,
    pub residual: f64,
    pub sa_iterations: usize,
    pub nk_iterations: usize,
    pub log: Vec<IterRecord>,
}

impl SieveSolution {
    pub fn function(&self) -> Option<SieveFunction> {
        (self.formulation == Formulation::Integrated).then(|| SieveFunction { space: self.space.clone(), coef: self.coef.clone() })
    }

    /// `V(z, ·)` for the expected formulation.
    pub fn expected(&self, z: &[f64]) -> Vec<f64> {
        let b = self.space.eval(z);
        self.coef.chunks(b.len()).map(|c| c.iter().zip(&b).map(|(x, y)| x * y).sum()).collect()
    }

    /// The integrated value `v(z)`; for the expected formulation
    /// `G(ū(z) + β V(z))`.
    pub fn value(&self, z: &[f64]) -> f64 {
        let b = self.space.eval(z);
        match self.formulation {
            Formulation::Integrated => b.iter().zip(&self.coef).map(|(x, c)| x * c).sum(),
            Formulation::Expected => {
                let r: Vec<f64> =
                    self.spec.utilities(z).iter().zip(self.expected(z)).map(|(u, v)| u + self.spec.beta * v).collect();
                self.shocks.surplus(&self.shocks.draws_at(z), &r, &mut Vec::new())
            }
        }
    }
}

pub fn build_sieve_map(
    spec: &ModelSpec,
    space: &SieveSpace,
    shocks: ShockSet,
    cont: &Continuation,
    formulation: Formulation,
) -> Result<Box<dyn FixedPointMap>> {
    Ok(match formulation {
        Formulation::Integrated => Box::new(IntegratedSieveMap::new(spec, space, shocks, cont)?),
        Formulation::Expected => Box::new(ExpectedSieveMap::new(spec, space, shocks, cont)?),
    })
}

/// Solves the projected Bellman equation in `space` from `initial`
/// coefficients (zero by default).
pub fn solve_sieve(
    spec: &ModelSpec,
    space: &SieveSpace,
    shocks: ShockSet,
    cont: &Continuation,
    formulation: Formulation,
    cfg: &SolverConfig,
    initial: Option<Vec<f64>>,
) -> Result<SieveSolution> {
    let map = build_sieve_map(spec, space, shocks.clone(), cont, formulation)?;
    let fp = solve(map.as_ref(), initial.unwrap_or_else(|| vec![0.0; map.dim()]), cfg)?;
    Ok(SieveSolution {
        spec: spec.clone(),
        shocks,
        space: space.clone(),
        formulation,
        coef: fp.x,
        residual: fp.residual,
        sa_iterations: fp.sa_iterations,
        nk_iterations: fp.nk_iterations,
        log: fp.log,
    })
}

/// Newton-Kantorovich on the projected system.
pub fn solve_nk_sieve(
    spec: &ModelSpec,
    space: &SieveSpace,
    shocks: ShockSet,
    cont: &Continuation,
    initial: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<SieveSolution> {
    let cfg = SolverConfig { method: Method::Nk, ..cfg.clone() };
    solve_sieve(spec, space, shocks, cont, Formulation::Integrated, &cfg, Some(initial))
}

/// Nodal values at the marginal draws with the weights that extend them
/// to any state.
#[derive(Debug, Clone)]
pub struct SelfApproxSolution {
    pub map: SelfApproxMap,
    pub values: Vec<f64>,
    pub residual: f64,
    pub sa_iterations: usize,
    pub nk_iterations: usize,
    pub log: Vec<IterRecord>,
}

/// The serializable content of a [`SelfApproxSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfApproxRecord {
    pub spec: ModelSpec,
    pub shocks: ShockSet,
    pub formulation: Formulation,
    pub draws: DrawSet,
    pub values: Vec<f64>,
    pub residual: f64,
}

impl SelfApproxSolution {
    /// `v(z)` off the grid; equals the nodal value when `z` is a draw.
    pub fn value(&self, z: f64) -> Result<f64> {
        match self.map.formulation() {
            Formulation::Integrated => self.map.evaluate_integrated(&self.values, z),
            Formulation::Expected => {
                let big_v = self.map.evaluate_expected(&self.values, z)?;
                Ok(self.map.integrated_from_expected(z, &big_v))
            }
        }
    }

    pub fn record(&self, spec: &ModelSpec, shocks: &ShockSet) -> SelfApproxRecord {
        SelfApproxRecord {
            spec: spec.clone(),
            shocks: shocks.clone(),
            formulation: self.map.formulation(),
            draws: self.map.draws().clone(),
            values: self.values.clone(),
            residual: self.residual,
        }
    }

    pub fn from_record(rec: SelfApproxRecord) -> Result<Self> {
        let map = SelfApproxMap::new(&rec.spec, rec.draws, rec.shocks, rec.formulation)?;
        Ok(Self { map, values: rec.values, residual: rec.residual, sa_iterations: 0, nk_iterations: 0, log: Vec::new() })
    }
}

pub fn solve_self_approx(
    spec: &ModelSpec,
    draws: DrawSet,
    shocks: ShockSet,
    formulation: Formulation,
    cfg: &SolverConfig,
    initial: Option<Vec<f64>>,
) -> Result<SelfApproxSolution> {
    let map = SelfApproxMap::new(spec, draws, shocks, formulation)?;
    let fp = solve(&map, initial.unwrap_or_else(|| vec![0.0; map.dim()]), cfg)?;
    Ok(SelfApproxSolution {
        map,
        values: fp.x,
        residual: fp.residual,
        sa_iterations: fp.sa_iterations,
        nk_iterations: fp.nk_iterations,
        log: fp.log,
    })
}

/// Newton-Kantorovich on the `N` nodal equations.
pub fn solve_nk_self_approx(
    spec: &ModelSpec,
    draws: DrawSet,
    shocks: ShockSet,
    initial: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<SelfApproxSolution> {
    let cfg = SolverConfig { method: Method::Nk, ..cfg.clone() };
    solve_self_approx(spec, draws, shocks, Formulation::Integrated, &cfg, Some(initial))
}

pub fn evaluate_self_approx(solution: &SelfApproxSolution, z: f64) -> Result<f64> {
    solution.value(z)
}

/// A solved value function of either kind.
#[derive(Debug, Clone)]
pub enum ValueApprox {
    Sieve(SieveSolution),
    SelfApprox(SelfApproxSolution),
}

impl ValueApprox {
    /// Integrated value at `z`.
    pub fn value(&self, z: &[f64]) -> Result<f64> {
        match self {
            ValueApprox::Sieve(s) => Ok(s.value(z)),
            ValueApprox::SelfApprox(s) => s.value(z[0]),
        }
    }
}
