//! Linear sieves: truncated Chebyshev polynomials, clamped B-splines, their
//! tensor products, and the least-squares projector onto them.

use log::warn;
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRAM_WARN_CONDITION: f64 = 1e12;
const GRAM_SINGULAR_CONDITION: f64 = 1e15;

fn affine_check(z_min: f64, z_max: f64) -> Result<()> {
    if !(z_max > z_min) {
        return Err(Error::domain(format!("empty interval [{z_min}, {z_max}]")));
    }
    Ok(())
}

/// Writes `T_0..T_{J-1}` at `t ∈ [-1,1]`, held at `(sign t)^k` outside.
#[inline]
fn chebyshev_into(t: f64, out: &mut [f64]) {
    if t.abs() > 1.0 {
        let s = t.signum();
        let mut p = 1.0;
        for o in out.iter_mut() {
            *o = p;
            p *= s;
        }
        return;
    }
    let mut prev = 1.0;
    let mut cur = t;
    for (k, o) in out.iter_mut().enumerate() {
        match k {
            0 => *o = 1.0,
            1 => *o = t,
            _ => {
                let next = 2.0 * t * cur - prev;
                prev = cur;
                cur = next;
                *o = next;
            }
        }
    }
}

pub fn chebyshev_basis(z: f64, j: usize, z_min: f64, z_max: f64) -> Result<Vec<f64>> {
    affine_check(z_min, z_max)?;
    let mut out = vec![0.0; j];
    chebyshev_into(2.0 * (z - z_min) / (z_max - z_min) - 1.0, &mut out);
    Ok(out)
}

/// Zeros of `T_M` mapped to `[z_min, z_max]`, ascending.
pub fn chebyshev_nodes(m: usize, z_min: f64, z_max: f64) -> Vec<f64> {
    let mf = m as f64;
    (1..=m)
        .rev()
        .map(|j| {
            let x = ((2 * j - 1) as f64 * std::f64::consts::PI / (2.0 * mf)).cos();
            z_min + (x + 1.0) * 0.5 * (z_max - z_min)
        })
        .collect()
}

/// Clamped knot vector for `j` B-splines of degree `order` on `[0,1]`.
pub fn bspline_knots(j: usize, order: usize) -> Result<Vec<f64>> {
    if j < order + 1 {
        return Err(Error::domain(format!("{j} B-splines of degree {order} need j >= {}", order + 1)));
    }
    let pieces = j - order;
    let mut knots = vec![0.0; order];
    knots.extend((0..=pieces).map(|i| i as f64 / pieces as f64));
    knots.extend(std::iter::repeat_n(1.0, order));
    Ok(knots)
}

/// Cox-de Boor evaluation of all `j = knots.len() - order - 1` splines at `t`.
fn bspline_into(t: f64, knots: &[f64], order: usize, out: &mut [f64]) {
    let j = out.len();
    let t = t.clamp(0.0, 1.0);
    let mut span = knots.partition_point(|&k| k <= t).saturating_sub(1);
    // At t = 1 use the last nonempty interval so the right end is covered.
    span = span.min(j - 1).max(order);
    let mut work = vec![0.0; order + 1];
    work[0] = 1.0;
    let mut left = vec![0.0; order + 1];
    let mut right = vec![0.0; order + 1];
    for deg in 1..=order {
        left[deg] = t - knots[span + 1 - deg];
        right[deg] = knots[span + deg] - t;
        let mut saved = 0.0;
        for r in 0..deg {
            let denom = right[r + 1] + left[deg - r];
            let tmp = if denom == 0.0 { 0.0 } else { work[r] / denom };
            work[r] = saved + right[r + 1] * tmp;
            saved = left[deg - r] * tmp;
        }
        work[deg] = saved;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, &w) in work.iter().enumerate() {
        out[span - order + r] = w;
    }
}

pub fn bspline_basis(z: f64, j: usize, order: usize, z_min: f64, z_max: f64) -> Result<Vec<f64>> {
    affine_check(z_min, z_max)?;
    let knots = bspline_knots(j, order)?;
    let mut out = vec![0.0; j];
    bspline_into((z - z_min) / (z_max - z_min), &knots, order, &mut out);
    Ok(out)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (a0, b0) = (lo, hi);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-15 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    [a0, b0, mid].into_iter().fold(mid, |best, x| if f(x) > f(best) { x } else { best })
}

/// Maximizers of each B-spline on `[0,1]`; for piecewise constants the
/// left ends of the knot intervals.
pub fn universal_nodes(j: usize, order: usize) -> Result<Vec<f64>> {
    let knots = bspline_knots(j, order)?;
    if order == 0 {
        return Ok(knots[..j].to_vec());
    }
    let mut nodes: Vec<f64> = (0..j)
        .map(|i| {
            let value = |t: f64| {
                let mut b = vec![0.0; j];
                bspline_into(t, &knots, order, &mut b);
                b[i]
            };
            let t = golden_max(value, knots[i], knots[i + order + 1]);
            // Odd degrees peak on a knot; remove the search round-off there.
            knots.iter().copied().find(|k| (k - t).abs() < 1e-9).unwrap_or(t)
        })
        .collect();
    nodes.sort_by(f64::total_cmp);
    Ok(nodes)
}

/// Extrema of `T_{M-1}` mapped to `[z_min, z_max]`, ascending, endpoints
/// included; a single node sits at `z_min`.
pub fn chebyshev_extrema(m: usize, z_min: f64, z_max: f64) -> Vec<f64> {
    if m == 1 {
        return vec![z_min];
    }
    let last = (m - 1) as f64;
    (0..m)
        .map(|j| {
            let x = -(j as f64 * std::f64::consts::PI / last).cos();
            z_min + (x + 1.0) * 0.5 * (z_max - z_min)
        })
        .collect()
}

/// Which Chebyshev points serve as design nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignNodes {
    /// Zeros of `T_M`.
    Gauss,
    /// Extrema of `T_{M-1}`, including both endpoints.
    #[default]
    Extrema,
}

impl DesignNodes {
    pub fn nodes(self, m: usize, z_min: f64, z_max: f64) -> Vec<f64> {
        match self {
            DesignNodes::Gauss => chebyshev_nodes(m, z_min, z_max),
            DesignNodes::Extrema => chebyshev_extrema(m, z_min, z_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Chebyshev,
    Bspline { order: usize },
}

/// A tensor-product sieve with `j` functions per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveSpace {
    pub family: Family,
    pub j: usize,
    pub d_z: usize,
    pub z_min: f64,
    pub z_max: f64,
    knots: Vec<f64>,
    /// Design points, one `d_z`-vector each, lexicographic in the per-dimension nodes.
    pub design: Vec<Vec<f64>>,
}

impl SieveSpace {
    /// Default design: `j` Chebyshev extrema (or Universal-Method nodes for
    /// B-splines) per dimension, so the projection interpolates.
    pub fn new(family: Family, j: usize, d_z: usize, z_min: f64, z_max: f64) -> Result<Self> {
        Self::with_design_size(family, j, d_z, z_min, z_max, j, DesignNodes::default())
    }

    /// `m >= j` design nodes per dimension; beyond interpolation the nodes
    /// are Chebyshev points for either family.
    pub fn with_design_size(
        family: Family,
        j: usize,
        d_z: usize,
        z_min: f64,
        z_max: f64,
        m: usize,
        nodes: DesignNodes,
    ) -> Result<Self> {
        affine_check(z_min, z_max)?;
        if j == 0 || d_z == 0 {
            return Err(Error::domain("sieve needs at least one basis function and one dimension"));
        }
        if m < j {
            return Err(Error::domain(format!("{m} design nodes cannot identify {j} coefficients")));
        }
        let knots = match family {
            Family::Chebyshev => Vec::new(),
            Family::Bspline { order } => bspline_knots(j, order)?,
        };
        let nodes_1d = match family {
            Family::Bspline { order } if m == j => universal_nodes(j, order)?
                .into_iter()
                .map(|t| z_min + t * (z_max - z_min))
                .collect(),
            _ => nodes.nodes(m, z_min, z_max),
        };
        let design = cartesian(&nodes_1d, d_z);
        Ok(Self { family, j, d_z, z_min, z_max, knots, design })
    }

    pub fn with_design(mut self, design: Vec<Vec<f64>>) -> Self {
        self.design = design;
        self
    }

    /// Total number of basis functions, `j^d_z`.
    pub fn k(&self) -> usize {
        self.j.pow(self.d_z as u32)
    }

    pub fn m(&self) -> usize {
        self.design.len()
    }

    pub fn eval_1d_into(&self, z: f64, out: &mut [f64]) {
        let width = self.z_max - self.z_min;
        match self.family {
            Family::Chebyshev => chebyshev_into(2.0 * (z - self.z_min) / width - 1.0, out),
            Family::Bspline { order } => bspline_into((z - self.z_min) / width, &self.knots, order, out),
        }
    }

    /// Tensor basis at `z` into `out` (length `k()`), first dimension slowest.
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        if self.d_z == 1 {
            self.eval_1d_into(z[0], out);
            return;
        }
        let j = self.j;
        let mut per_dim = vec![0.0; j * self.d_z];
        for (dim, &zi) in z.iter().enumerate() {
            self.eval_1d_into(zi, &mut per_dim[dim * j..(dim + 1) * j]);
        }
        tensor_into(&per_dim, j, self.d_z, out);
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.eval_into(z, &mut out);
        out
    }

    pub fn projector(&self) -> Result<Projector> {
        Projector::new(self)
    }
}

/// Kronecker product of per-dimension vectors stored back to back.
pub(crate) fn tensor_into(per_dim: &[f64], j: usize, d_z: usize, out: &mut [f64]) {
    out[..j].copy_from_slice(&per_dim[..j]);
    let mut len = j;
    for dim in 1..d_z {
        let factor = &per_dim[dim * j..(dim + 1) * j];
        for a in (0..len).rev() {
            let head = out[a];
            for (b, &f) in factor.iter().enumerate() {
                out[a * j + b] = head * f;
            }
        }
        len *= j;
    }
}

pub fn tensor_basis(z: &[f64], space: &SieveSpace) -> Vec<f64> {
    space.eval(z)
}

fn cartesian(nodes: &[f64], d_z: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..d_z {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                nodes.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    out
}

/// Least-squares projection from design-point values to coefficients.
#[derive(Debug, Clone)]
pub struct Projector {
    /// Basis at the design points, `M x K`.
    pub basis: DMatrix<f64>,
    /// `(B'B)^{-1} B'`, `K x M`.
    pub q: DMatrix<f64>,
    pub gram_condition: f64,
}

impl Projector {
    pub fn new(space: &SieveSpace) -> Result<Self> {
        let (m, k) = (space.m(), space.k());
        if m < k {
            return Err(Error::SingularProjection);
        }
        let mut basis = DMatrix::<f64>::zeros(m, k);
        let mut row = vec![0.0; k];
        for (i, z) in space.design.iter().enumerate() {
            space.eval_into(z, &mut row);
            for (c, &v) in row.iter().enumerate() {
                basis[(i, c)] = v;
            }
        }
        Self::from_basis(basis)
    }

    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let eig = SymmetricEigen::new(gram.clone());
        let hi = eig.eigenvalues.max();
        let lo = eig.eigenvalues.min();
        let gram_condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(gram_condition < GRAM_SINGULAR_CONDITION) {
            return Err(Error::SingularProjection);
        }
        if gram_condition > GRAM_WARN_CONDITION {
            warn!("projection Gram matrix is ill-conditioned (condition number {gram_condition:e})");
        }
        let chol = Cholesky::new(gram).ok_or(Error::SingularProjection)?;
        let q = chol.solve(&basis.transpose());
        Ok(Self { basis, q, gram_condition })
    }

    pub fn k(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.q.ncols()
    }

    /// Coefficients `α = (B'B)^{-1} B' v`.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..self.m()).map(|c| self.q[(r, c)] * values[c]).sum();
        }
        out
    }

    /// Fitted values `B α` at the design points.
    pub fn fitted(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.basis.nrows())
            .map(|r| (0..self.k()).map(|c| self.basis[(r, c)] * coef[c]).sum())
            .collect()
    }

    /// `B (B'B)^{-1} B'`, `M x M`.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        &self.basis * &self.q
    }

    /// Grid-restricted operator sup-norm: maximum absolute row sum of `P`.
    pub fn sup_norm(&self) -> f64 {
        let p = self.p_matrix();
        p.row_iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

pub fn project(projector: &Projector, values: &[f64]) -> Vec<f64> {
    projector.project(values)
}

pub fn projector_sup_norm(projector: &Projector) -> f64 {
    projector.sup_norm()
}

/// A function `z ↦ α'B(z)` in a sieve space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveFunction {
    pub space: SieveSpace,
    pub coef: Vec<f64>,
}

impl SieveFunction {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let b = self.space.eval(z);
        b.iter().zip(&self.coef).map(|(x, c)| x * c).sum()
    }
}
