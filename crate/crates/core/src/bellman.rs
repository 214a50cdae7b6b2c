//! Smoothed simulated Bellman operators for the integrated value function
//! `v` and the expected value function `V`, their differentials, and the
//! finite-dimensional fixed-point maps used by the solvers.
//!
//! Next states are clamped to the approximation domain before any value or
//! utility is evaluated there, so both formulations describe the same
//! problem when the value function is held constant beyond the boundary.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Decision, ModelSpec};
use crate::quadrature::BetaQuadrature;
use crate::sampling::{DrawKind, DrawSet, MarginalIndex, ShockSet, SparseRow, WeightMatrix};
use crate::sieve::{tensor_into, Projector, SieveSpace};
use crate::smoothing::{smooth_max_unchecked, smooth_max_with_grad};

/// Default number of Gauss-Jacobi nodes for the exact operator.
pub const DEFAULT_QUADRATURE_NODES: usize = 60;

impl ShockSet {
    /// `(1/Ñ) Σ_j G_λ(r + ε_j)` for the draws `eps` at one state; the closed
    /// form when `eps` is empty.
    pub fn surplus(&self, eps: &[f64], r: &[f64], buf: &mut Vec<f64>) -> f64 {
        if eps.is_empty() {
            return smooth_max_unchecked(r, self.lambda);
        }
        buf.resize(r.len(), 0.0);
        let mut total = 0.0;
        let chunks = eps.chunks(r.len());
        let w = 1.0 / chunks.len() as f64;
        for e in chunks {
            for ((b, &x), &e) in buf.iter_mut().zip(r).zip(e) {
                *b = x + e;
            }
            total += smooth_max_unchecked(buf, self.lambda);
        }
        w * total
    }

    /// Surplus and its gradient in `r`, written into `grad`.
    pub fn surplus_grad(&self, eps: &[f64], r: &[f64], grad: &mut [f64], buf: &mut Vec<f64>) -> f64 {
        let d = r.len();
        if eps.is_empty() {
            return smooth_max_with_grad(r, self.lambda, grad);
        }
        buf.resize(2 * d, 0.0);
        let (shifted, local) = buf.split_at_mut(d);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let chunks = eps.chunks(d);
        let w = 1.0 / chunks.len() as f64;
        let mut total = 0.0;
        for e in chunks {
            for ((b, &x), &e) in shifted.iter_mut().zip(r).zip(e) {
                *b = x + e;
            }
            total += w * smooth_max_with_grad(shifted, self.lambda, local);
            for (g, &l) in grad.iter_mut().zip(local.iter()) {
                *g += w * l;
            }
        }
        total
    }
}

/// How the conditional expectation over next states is formed.
#[derive(Debug, Clone)]
pub enum Continuation {
    /// Monte Carlo draws from the transition, one block per evaluation
    /// point and decision, equally weighted.
    Draws(DrawSet),
    /// The point mass plus Gauss-Jacobi nodes for the Beta increment in
    /// each dimension, combined as a product rule.
    Quadrature(BetaQuadrature),
}

/// Weighted next-state support for one evaluation point and decision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Support {
    pub weights: Vec<f64>,
    /// `weights.len()` points of `d_z` coordinates each.
    pub points: Vec<f64>,
}

impl Continuation {
    pub fn quadrature(spec: &ModelSpec, n_nodes: usize) -> Result<Self> {
        Ok(Continuation::Quadrature(BetaQuadrature::new(spec.a, spec.b, n_nodes)?))
    }

    pub fn check(&self, spec: &ModelSpec, n_points: usize) -> Result<()> {
        if let Continuation::Draws(ds) = self {
            if !matches!(ds.kind, DrawKind::Conditional) {
                return Err(Error::domain("sieve continuation needs conditional draws"));
            }
            if ds.n_points != n_points || ds.d_z != spec.d_z || ds.n_decisions != spec.n_decisions() {
                return Err(Error::domain(format!(
                    "draw set covers {} points, {} decisions; operator needs {} points, {} decisions",
                    ds.n_points,
                    ds.n_decisions,
                    n_points,
                    spec.n_decisions()
                )));
            }
        }
        Ok(())
    }

    fn support_1d(spec: &ModelSpec, rule: &BetaQuadrature, x: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(rule.len() + 1);
        if spec.pi > 0.0 {
            out.push((spec.pi, x));
        }
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            out.push(((1.0 - spec.pi) * w, x + spec.sigma_z * t));
        }
        out
    }

    /// Next-state support at `points[m]` under `d`, clamped to the domain.
    pub fn support(&self, spec: &ModelSpec, points: &[Vec<f64>], m: usize, d: Decision) -> Support {
        let clamp = |z: f64| z.clamp(spec.z_min, spec.z_max_domain);
        match self {
            Continuation::Draws(ds) => {
                let raw = ds.conditional(m, d);
                Support { weights: vec![1.0 / ds.n as f64; ds.n], points: raw.iter().map(|&z| clamp(z)).collect() }
            }
            Continuation::Quadrature(rule) => {
                let mut sup = Support { weights: vec![1.0], points: Vec::new() };
                let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
                for (dim, &z) in points[m].iter().enumerate() {
                    let one = Self::support_1d(spec, rule, spec.post_decision(z, d.replaces(dim)));
                    let mut weights = Vec::with_capacity(sup.weights.len() * one.len());
                    let mut next = Vec::with_capacity(weights.capacity());
                    for (w, p) in sup.weights.iter().zip(&pts) {
                        for &(w1, z1) in &one {
                            weights.push(w * w1);
                            let mut q = p.clone();
                            q.push(clamp(z1));
                            next.push(q);
                        }
                    }
                    sup.weights = weights;
                    pts = next;
                }
                sup.points = pts.concat();
                sup
            }
        }
    }

    /// `E[B(Z') | points[m], d]` for every point and decision, laid out `[m][d][k]`.
    pub fn expected_basis(&self, spec: &ModelSpec, space: &SieveSpace, points: &[Vec<f64>]) -> Vec<f64> {
        let n_dec = spec.n_decisions();
        let k = space.k();
        let j = space.j;
        let blocks: Vec<Vec<f64>> = (0..points.len() * n_dec)
            .into_par_iter()
            .map(|job| {
                let (m, d) = (job / n_dec, Decision(job % n_dec));
                let mut acc = vec![0.0; k];
                match self {
                    Continuation::Draws(_) => {
                        let sup = self.support(spec, points, m, d);
                        let mut b = vec![0.0; k];
                        for (w, z) in sup.weights.iter().zip(sup.points.chunks(spec.d_z)) {
                            space.eval_into(z, &mut b);
                            for (a, &x) in acc.iter_mut().zip(&b) {
                                *a += w * x;
                            }
                        }
                    }
                    Continuation::Quadrature(rule) => {
                        let mut per_dim = vec![0.0; j * spec.d_z];
                        let mut b = vec![0.0; j];
                        for (dim, &z) in points[m].iter().enumerate() {
                            let slot = &mut per_dim[dim * j..(dim + 1) * j];
                            for (w, z1) in Self::support_1d(spec, rule, spec.post_decision(z, d.replaces(dim))) {
                                space.eval_1d_into(z1.clamp(spec.z_min, spec.z_max_domain), &mut b);
                                for (a, &x) in slot.iter_mut().zip(&b) {
                                    *a += w * x;
                                }
                            }
                        }
                        tensor_into(&per_dim, j, spec.d_z, &mut acc);
                    }
                }
                acc
            })
            .collect();
        blocks.concat()
    }
}

fn check_smoothing(shocks: &ShockSet, spec: &ModelSpec) -> Result<()> {
    if shocks.n_decisions != spec.n_decisions() {
        return Err(Error::domain("taste shocks do not match the number of decisions"));
    }
    if !(shocks.lambda >= 0.0) {
        return Err(Error::domain("smoothing parameter must be >= 0"));
    }
    Ok(())
}

fn expectation(spec: &ModelSpec, sup: &Support, f: &impl Fn(&[f64]) -> f64) -> f64 {
    sup.weights.iter().zip(sup.points.chunks(spec.d_z)).map(|(w, z)| w * f(z)).sum()
}

/// `Γ̄(v)(z) = Σ_j w_j G_λ(ū(z) + ε_j + β E[v(Z')|z,·])` at each point.
pub fn apply_gamma_bar(
    spec: &ModelSpec,
    shocks: &ShockSet,
    cont: &Continuation,
    points: &[Vec<f64>],
    v: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    check_smoothing(shocks, spec)?;
    cont.check(spec, points.len())?;
    Ok((0..points.len())
        .into_par_iter()
        .map(|m| {
            let mut buf = Vec::new();
            let mut r = spec.utilities(&points[m]);
            for (d, rd) in r.iter_mut().enumerate() {
                *rd += spec.beta * expectation(spec, &cont.support(spec, points, m, Decision(d)), &v);
            }
            shocks.surplus(&shocks.draws_at(&points[m]), &r, &mut buf)
        })
        .collect())
}

/// The closed-form extreme-value operator with Gauss-Jacobi continuation.
pub fn apply_gamma_bar_quadrature(
    spec: &ModelSpec,
    points: &[Vec<f64>],
    n_nodes: usize,
    v: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    apply_gamma_bar(spec, &ShockSet::analytic(spec), &Continuation::quadrature(spec, n_nodes)?, points, v)
}

/// `∇Γ̄(v)[dv](z) = β Σ_d Ġ_d(·) E[dv(Z')|z,d]`.
pub fn gamma_bar_differential(
    spec: &ModelSpec,
    shocks: &ShockSet,
    cont: &Continuation,
    points: &[Vec<f64>],
    v: impl Fn(&[f64]) -> f64 + Sync,
    dv: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    check_smoothing(shocks, spec)?;
    cont.check(spec, points.len())?;
    Ok((0..points.len())
        .into_par_iter()
        .map(|m| {
            let n_dec = spec.n_decisions();
            let mut buf = Vec::new();
            let mut r = spec.utilities(&points[m]);
            let mut edv = vec![0.0; n_dec];
            for d in 0..n_dec {
                let sup = cont.support(spec, points, m, Decision(d));
                r[d] += spec.beta * expectation(spec, &sup, &v);
                edv[d] = expectation(spec, &sup, &dv);
            }
            let mut grad = vec![0.0; n_dec];
            shocks.surplus_grad(&shocks.draws_at(&points[m]), &r, &mut grad, &mut buf);
            spec.beta * grad.iter().zip(&edv).map(|(g, e)| g * e).sum::<f64>()
        })
        .collect())
}

/// `Γ(V)(z,d) = E[Σ_j w_j G_λ(ū(Z') + ε_j + β V(Z')) | z, d]`, one row of
/// `2^d_z` values per point.
pub fn apply_gamma(
    spec: &ModelSpec,
    shocks: &ShockSet,
    cont: &Continuation,
    points: &[Vec<f64>],
    big_v: impl Fn(&[f64]) -> Vec<f64> + Sync,
) -> Result<Vec<Vec<f64>>> {
    check_smoothing(shocks, spec)?;
    cont.check(spec, points.len())?;
    let n_dec = spec.n_decisions();
    Ok((0..points.len())
        .into_par_iter()
        .map(|m| {
            (0..n_dec)
                .map(|d| {
                    let sup = cont.support(spec, points, m, Decision(d));
                    expectation(spec, &sup, &|z: &[f64]| {
                        let vals = big_v(z);
                        let r: Vec<f64> = spec.utilities(z).iter().zip(&vals).map(|(u, x)| u + spec.beta * x).collect();
                        shocks.surplus(&shocks.draws_at(z), &r, &mut Vec::new())
                    })
                })
                .collect()
        })
        .collect())
}

/// `∇Γ(V)[dV](z,d) = β E[Σ_d' Ġ_d'(ū(Z') + βV(Z')) dV(Z',d') | z, d]`.
pub fn gamma_differential(
    spec: &ModelSpec,
    shocks: &ShockSet,
    cont: &Continuation,
    points: &[Vec<f64>],
    big_v: impl Fn(&[f64]) -> Vec<f64> + Sync,
    d_big_v: impl Fn(&[f64]) -> Vec<f64> + Sync,
) -> Result<Vec<Vec<f64>>> {
    check_smoothing(shocks, spec)?;
    cont.check(spec, points.len())?;
    let n_dec = spec.n_decisions();
    Ok((0..points.len())
        .into_par_iter()
        .map(|m| {
            (0..n_dec)
                .map(|d| {
                    let sup = cont.support(spec, points, m, Decision(d));
                    expectation(spec, &sup, &|z: &[f64]| {
                        let vals = big_v(z);
                        let r: Vec<f64> = spec.utilities(z).iter().zip(&vals).map(|(u, x)| u + spec.beta * x).collect();
                        let mut grad = vec![0.0; n_dec];
                        shocks.surplus_grad(&shocks.draws_at(z), &r, &mut grad, &mut Vec::new());
                        spec.beta * grad.iter().zip(d_big_v(z)).map(|(g, x)| g * x).sum::<f64>()
                    })
                })
                .collect()
        })
        .collect())
}

/// A finite-dimensional fixed-point problem `x = T(x)`.
pub trait FixedPointMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `∂T/∂x` at `x`.
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;
    /// Whether `T` is differentiable (smoothing parameter > 0).
    fn is_smooth(&self) -> bool;
}

/// Projected integrated-value operator on sieve coefficients,
/// `α ↦ (B'B)^{-1} B' Γ̄(α'B)`, with the continuation basis cached.
#[derive(Debug, Clone)]
pub struct IntegratedSieveMap {
    beta: f64,
    shocks: ShockSet,
    eps: Vec<Vec<f64>>,
    n_dec: usize,
    m: usize,
    k: usize,
    util: Vec<f64>,
    eb: Vec<f64>,
    projector: Projector,
}

impl IntegratedSieveMap {
    pub fn new(spec: &ModelSpec, space: &SieveSpace, shocks: ShockSet, cont: &Continuation) -> Result<Self> {
        check_smoothing(&shocks, spec)?;
        if space.d_z != spec.d_z {
            return Err(Error::domain("sieve dimension differs from the model dimension"));
        }
        cont.check(spec, space.m())?;
        let projector = space.projector()?;
        let util = space.design.iter().flat_map(|z| spec.utilities(z)).collect();
        let eb = cont.expected_basis(spec, space, &space.design);
        let eps = space.design.par_iter().map(|z| shocks.draws_at(z)).collect();
        Ok(Self { beta: spec.beta, shocks, eps, n_dec: spec.n_decisions(), m: space.m(), k: space.k(), util, eb, projector })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// `E[B(Z')|z_m, d]` as cached.
    pub fn expected_basis(&self, m: usize, d: usize) -> &[f64] {
        let start = (m * self.n_dec + d) * self.k;
        &self.eb[start..start + self.k]
    }

    fn arguments(&self, alpha: &[f64], m: usize, r: &mut [f64]) {
        for (d, rd) in r.iter_mut().enumerate() {
            let cont: f64 = self.expected_basis(m, d).iter().zip(alpha).map(|(b, a)| b * a).sum();
            *rd = self.util[m * self.n_dec + d] + self.beta * cont;
        }
    }

    /// `Γ̄(α'B)` at the design points.
    pub fn gamma_values(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.m)
            .into_par_iter()
            .map(|m| {
                let mut r = vec![0.0; self.n_dec];
                self.arguments(alpha, m, &mut r);
                self.shocks.surplus(&self.eps[m], &r, &mut Vec::new())
            })
            .collect()
    }

    /// `∇Γ̄(α'B)[dα'B]` at the design points.
    pub fn gamma_differential(&self, alpha: &[f64], dalpha: &[f64]) -> Vec<f64> {
        let jac = self.value_jacobian(alpha);
        (0..self.m).map(|m| (0..self.k).map(|c| jac[(m, c)] * dalpha[c]).sum()).collect()
    }

    /// `∂Γ̄(α'B)(z_m)/∂α_k`, `M x K`.
    pub fn value_jacobian(&self, alpha: &[f64]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..self.m)
            .into_par_iter()
            .map(|m| {
                let mut r = vec![0.0; self.n_dec];
                let mut s = vec![0.0; self.n_dec];
                self.arguments(alpha, m, &mut r);
                self.shocks.surplus_grad(&self.eps[m], &r, &mut s, &mut Vec::new());
                let mut row = vec![0.0; self.k];
                for (d, &sd) in s.iter().enumerate() {
                    for (o, &b) in row.iter_mut().zip(self.expected_basis(m, d)) {
                        *o += self.beta * sd * b;
                    }
                }
                row
            })
            .collect();
        DMatrix::from_fn(self.m, self.k, |i, j| rows[i][j])
    }
}

impl FixedPointMap for IntegratedSieveMap {
    fn dim(&self) -> usize {
        self.k
    }

    fn apply(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        Ok(self.projector.project(&self.gamma_values(alpha)))
    }

    fn jacobian(&self, alpha: &[f64]) -> Result<DMatrix<f64>> {
        Ok(&self.projector.q * self.value_jacobian(alpha))
    }

    fn is_smooth(&self) -> bool {
        self.shocks.lambda > 0.0
    }
}

/// Weights, basis rows (`n x K`), utilities (`n x D`) and taste shocks at
/// the next-state support of one `(m, d)` block.
#[derive(Debug, Clone)]
struct SupportCache {
    weights: Vec<f64>,
    basis: Vec<f64>,
    util: Vec<f64>,
    eps: Vec<Vec<f64>>,
}

/// Projected expected-value operator on coefficients `A`, stored
/// decision-major (`A[d * K + k]`).
#[derive(Debug, Clone)]
pub struct ExpectedSieveMap {
    beta: f64,
    shocks: ShockSet,
    n_dec: usize,
    m: usize,
    k: usize,
    supports: Vec<SupportCache>,
    projector: Projector,
}

impl ExpectedSieveMap {
    pub fn new(spec: &ModelSpec, space: &SieveSpace, shocks: ShockSet, cont: &Continuation) -> Result<Self> {
        check_smoothing(&shocks, spec)?;
        if space.d_z != spec.d_z {
            return Err(Error::domain("sieve dimension differs from the model dimension"));
        }
        cont.check(spec, space.m())?;
        let projector = space.projector()?;
        let n_dec = spec.n_decisions();
        let supports = (0..space.m() * n_dec)
            .into_par_iter()
            .map(|job| {
                let sup = cont.support(spec, &space.design, job / n_dec, Decision(job % n_dec));
                let mut basis = Vec::with_capacity(sup.weights.len() * space.k());
                let mut util = Vec::with_capacity(sup.weights.len() * n_dec);
                let mut eps = Vec::with_capacity(sup.weights.len());
                for z in sup.points.chunks(spec.d_z) {
                    basis.extend(space.eval(z));
                    util.extend(spec.utilities(z));
                    eps.push(shocks.draws_at(z));
                }
                SupportCache { weights: sup.weights, basis, util, eps }
            })
            .collect();
        Ok(Self { beta: spec.beta, shocks, n_dec, m: space.m(), k: space.k(), supports, projector })
    }

    /// Writes `ū(Z_s) + β V(Z_s)` for support point `s` of block `job`.
    fn arguments(&self, coef: &[f64], job: usize, s: usize, r: &mut [f64]) {
        let SupportCache { basis, util, .. } = &self.supports[job];
        let b = &basis[s * self.k..(s + 1) * self.k];
        for (d, rd) in r.iter_mut().enumerate() {
            let v: f64 = b.iter().zip(&coef[d * self.k..(d + 1) * self.k]).map(|(x, a)| x * a).sum();
            *rd = util[s * self.n_dec + d] + self.beta * v;
        }
    }

    /// `Γ(A'B)(z_m, d)` laid out `[m][d]`.
    pub fn gamma_values(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.m * self.n_dec)
            .into_par_iter()
            .map(|job| {
                let mut r = vec![0.0; self.n_dec];
                let mut buf = Vec::new();
                let cache = &self.supports[job];
                let mut total = 0.0;
                for (s, &w) in cache.weights.iter().enumerate() {
                    self.arguments(coef, job, s, &mut r);
                    total += w * self.shocks.surplus(&cache.eps[s], &r, &mut buf);
                }
                total
            })
            .collect()
    }

    /// `∂Γ(A'B)(z_m, d)/∂A`, rows `[m][d]`, columns `[d'][k]`.
    pub fn value_jacobian(&self, coef: &[f64]) -> DMatrix<f64> {
        let width = self.n_dec * self.k;
        let rows: Vec<Vec<f64>> = (0..self.m * self.n_dec)
            .into_par_iter()
            .map(|job| {
                let mut r = vec![0.0; self.n_dec];
                let mut g = vec![0.0; self.n_dec];
                let mut buf = Vec::new();
                let mut row = vec![0.0; width];
                let cache = &self.supports[job];
                for (s, &w) in cache.weights.iter().enumerate() {
                    self.arguments(coef, job, s, &mut r);
                    self.shocks.surplus_grad(&cache.eps[s], &r, &mut g, &mut buf);
                    let b = &cache.basis[s * self.k..(s + 1) * self.k];
                    for (dp, &gd) in g.iter().enumerate() {
                        let scale = self.beta * w * gd;
                        for (o, &x) in row[dp * self.k..(dp + 1) * self.k].iter_mut().zip(b) {
                            *o += scale * x;
                        }
                    }
                }
                row
            })
            .collect();
        DMatrix::from_fn(self.m * self.n_dec, width, |i, j| rows[i][j])
    }

    fn project_blocks(&self, values: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_dec * self.k);
        for d in 0..self.n_dec {
            let col: Vec<f64> = (0..self.m).map(|m| values[m * self.n_dec + d]).collect();
            out.extend(self.projector.project(&col));
        }
        out
    }
}

impl FixedPointMap for ExpectedSieveMap {
    fn dim(&self) -> usize {
        self.n_dec * self.k
    }

    fn apply(&self, coef: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project_blocks(&self.gamma_values(coef)))
    }

    fn jacobian(&self, coef: &[f64]) -> Result<DMatrix<f64>> {
        let vj = self.value_jacobian(coef);
        let width = vj.ncols();
        let q = &self.projector.q;
        let mut out = DMatrix::<f64>::zeros(self.n_dec * self.k, width);
        for d in 0..self.n_dec {
            for kk in 0..self.k {
                for m in 0..self.m {
                    let qv = q[(kk, m)];
                    if qv == 0.0 {
                        continue;
                    }
                    let src = m * self.n_dec + d;
                    for c in 0..width {
                        out[(d * self.k + kk, c)] += qv * vj[(src, c)];
                    }
                }
            }
        }
        Ok(out)
    }

    fn is_smooth(&self) -> bool {
        self.shocks.lambda > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Solve for `v` at the draws.
    Integrated,
    /// Solve for `V(·, d)` at the draws.
    Expected,
}

/// The self-approximating operator on nodal values at uniform marginal draws.
#[derive(Debug, Clone)]
pub struct SelfApproxMap {
    spec: ModelSpec,
    shocks: ShockSet,
    formulation: Formulation,
    n: usize,
    n_dec: usize,
    draws: DrawSet,
    index: MarginalIndex,
    util: Vec<f64>,
    eps: Vec<Vec<f64>>,
    weights: Vec<WeightMatrix>,
}

impl SelfApproxMap {
    pub fn new(spec: &ModelSpec, draws: DrawSet, shocks: ShockSet, formulation: Formulation) -> Result<Self> {
        check_smoothing(&shocks, spec)?;
        let index = MarginalIndex::new(spec, &draws)?;
        let z = draws.marginal();
        let weights = spec
            .decisions()
            .map(|d| crate::sampling::weight_matrix_from_index(&index, z, d))
            .collect::<Result<Vec<_>>>()?;
        let util = z.iter().flat_map(|&zi| spec.utilities(&[zi])).collect();
        let eps = z.par_iter().map(|&zi| shocks.draws_at(&[zi])).collect();
        Ok(Self {
            spec: spec.clone(),
            shocks,
            formulation,
            n: z.len(),
            n_dec: spec.n_decisions(),
            draws,
            index,
            util,
            eps,
            weights,
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn draws(&self) -> &DrawSet {
        &self.draws
    }

    pub fn nodes(&self) -> &[f64] {
        self.draws.marginal()
    }

    pub fn weight_matrix(&self, d: Decision) -> &WeightMatrix {
        &self.weights[d.index()]
    }

    fn node_arguments(&self, x: &[f64], i: usize, r: &mut [f64]) {
        for (d, rd) in r.iter_mut().enumerate() {
            *rd = self.util[i * self.n_dec + d] + self.spec.beta * x[i * self.n_dec + d];
        }
    }

    /// `G(ū(Z_i) + β V_i)` for each node in the expected formulation.
    fn node_surplus(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut r = vec![0.0; self.n_dec];
                self.node_arguments(x, i, &mut r);
                self.shocks.surplus(&self.eps[i], &r, &mut Vec::new())
            })
            .collect()
    }

    /// Integrated value at an arbitrary state given nodal `v`.
    pub fn evaluate_integrated(&self, v: &[f64], z: f64) -> Result<f64> {
        let spec = &self.spec;
        let util = spec.utilities(&[z]);
        let mut r = vec![0.0; self.n_dec];
        let mut implicit = None;
        for (d, rd) in r.iter_mut().enumerate() {
            if Decision(d).replaces(0) {
                *rd = util[d] + spec.beta * self.weights[d].row(0).dot(v);
                continue;
            }
            let (raw, matched) = self.index.raw_row(z);
            let atom = if matched { 0.0 } else { spec.pi };
            let total = raw.total() + atom;
            if !(total > 0.0) {
                return Err(Error::WeightDegeneracy(format!("no draw in the transition support of state {z}")));
            }
            *rd = util[d] + spec.beta * raw.dot(v) / total;
            if atom > 0.0 {
                implicit = Some((d, spec.beta * atom / total));
            }
        }
        let mut buf = Vec::new();
        let eps = self.shocks.draws_at(&[z]);
        let Some((d, slope)) = implicit else {
            return Ok(self.shocks.surplus(&eps, &r, &mut buf));
        };
        // The point mass at z carries the unknown value v(z) itself.
        let base = r[d];
        let mut y = self.shocks.surplus(&eps, &r, &mut buf);
        let mut g = vec![0.0; self.n_dec];
        for _ in 0..100 {
            r[d] = base + slope * y;
            let f = y - self.shocks.surplus_grad(&eps, &r, &mut g, &mut buf);
            let step = f / (1.0 - slope * g[d]);
            y -= step;
            if step.abs() <= 1e-15 * (1.0 + y.abs()) {
                break;
            }
        }
        Ok(y)
    }

    /// `G(ū(z) + β V(z))`.
    pub fn integrated_from_expected(&self, z: f64, big_v: &[f64]) -> f64 {
        let r: Vec<f64> = self.spec.utilities(&[z]).iter().zip(big_v).map(|(u, v)| u + self.spec.beta * v).collect();
        self.shocks.surplus(&self.shocks.draws_at(&[z]), &r, &mut Vec::new())
    }

    /// Expected value `V(z, ·)` at an arbitrary state given nodal `V`.
    pub fn evaluate_expected(&self, big_v: &[f64], z: f64) -> Result<Vec<f64>> {
        let spec = &self.spec;
        let g_nodes = self.node_surplus(big_v);
        let util = spec.utilities(&[z]);
        let mut out = vec![0.0; self.n_dec];
        let mut implicit = None;
        for (d, o) in out.iter_mut().enumerate() {
            if Decision(d).replaces(0) {
                *o = self.weights[d].row(0).dot(&g_nodes);
                continue;
            }
            let (raw, matched) = self.index.raw_row(z);
            let atom = if matched { 0.0 } else { spec.pi };
            let total = raw.total() + atom;
            if !(total > 0.0) {
                return Err(Error::WeightDegeneracy(format!("no draw in the transition support of state {z}")));
            }
            *o = raw.dot(&g_nodes) / total;
            if atom > 0.0 {
                implicit = Some((d, atom / total));
            }
        }
        let Some((d, share)) = implicit else {
            return Ok(out);
        };
        // V(z,d) = base + share * G(ū(z) + β V(z)), solved for V(z,d).
        let base = out[d];
        let mut buf = Vec::new();
        let mut g = vec![0.0; self.n_dec];
        let mut r = vec![0.0; self.n_dec];
        let eps = self.shocks.draws_at(&[z]);
        for _ in 0..100 {
            for (dd, rd) in r.iter_mut().enumerate() {
                *rd = util[dd] + spec.beta * out[dd];
            }
            let surplus = self.shocks.surplus_grad(&eps, &r, &mut g, &mut buf);
            let f = out[d] - base - share * surplus;
            let step = f / (1.0 - share * spec.beta * g[d]);
            out[d] -= step;
            if step.abs() <= 1e-15 * (1.0 + out[d].abs()) {
                break;
            }
        }
        Ok(out)
    }
}

impl FixedPointMap for SelfApproxMap {
    fn dim(&self) -> usize {
        match self.formulation {
            Formulation::Integrated => self.n,
            Formulation::Expected => self.n * self.n_dec,
        }
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let beta = self.spec.beta;
        Ok(match self.formulation {
            Formulation::Integrated => (0..self.n)
                .into_par_iter()
                .map(|k| {
                    let mut r = vec![0.0; self.n_dec];
                    for (d, rd) in r.iter_mut().enumerate() {
                        *rd = self.util[k * self.n_dec + d] + beta * self.weights[d].row(k).dot(x);
                    }
                    self.shocks.surplus(&self.eps[k], &r, &mut Vec::new())
                })
                .collect(),
            Formulation::Expected => {
                let g = self.node_surplus(x);
                (0..self.n * self.n_dec)
                    .into_par_iter()
                    .map(|job| self.weights[job % self.n_dec].row(job / self.n_dec).dot(&g))
                    .collect()
            }
        })
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let beta = self.spec.beta;
        let dim = self.dim();
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let mut buf = Vec::new();
        let mut r = vec![0.0; self.n_dec];
        let mut s = vec![0.0; self.n_dec];
        match self.formulation {
            Formulation::Integrated => {
                for k in 0..self.n {
                    for (d, rd) in r.iter_mut().enumerate() {
                        *rd = self.util[k * self.n_dec + d] + beta * self.weights[d].row(k).dot(x);
                    }
                    self.shocks.surplus_grad(&self.eps[k], &r, &mut s, &mut buf);
                    for (d, &sd) in s.iter().enumerate() {
                        let row: &SparseRow = self.weights[d].row(k);
                        for (&i, &w) in row.idx.iter().zip(&row.w) {
                            jac[(k, i)] += beta * sd * w;
                        }
                    }
                }
            }
            Formulation::Expected => {
                let grads: Vec<Vec<f64>> = (0..self.n)
                    .map(|i| {
                        self.node_arguments(x, i, &mut r);
                        self.shocks.surplus_grad(&self.eps[i], &r, &mut s, &mut buf);
                        s.clone()
                    })
                    .collect();
                for k in 0..self.n {
                    for d in 0..self.n_dec {
                        let row = self.weights[d].row(k);
                        for (&i, &w) in row.idx.iter().zip(&row.w) {
                            for (dp, &g) in grads[i].iter().enumerate() {
                                jac[(k * self.n_dec + d, i * self.n_dec + dp)] += beta * w * g;
                            }
                        }
                    }
                }
            }
        }
        Ok(jac)
    }

    fn is_smooth(&self) -> bool {
        self.shocks.lambda > 0.0
    }
}
