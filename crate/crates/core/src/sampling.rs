//! Importance samplers, substream seeding and importance weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Decision, ModelSpec, TransitionSampler};

const TAG_CONDITIONAL: u64 = 1;
const TAG_MARGINAL: u64 = 2;
const TAG_SHOCKS: u64 = 3;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// An independent generator for the substream labelled by `key`.
///
/// The base seed fixes the ChaCha key and the label selects the stream, so
/// results do not depend on the order in which substreams are consumed.
pub fn substream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = key.iter().fold(0x5eed_u64, |h, &k| splitmix(h ^ splitmix(k)));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrawKind {
    Conditional,
    Marginal { z_max: f64 },
}

/// Monte Carlo state draws.
///
/// Conditional draws are laid out as `[point][decision][draw][dim]`; marginal
/// draws are a single `[draw][dim]` block shared by every point and decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSet {
    pub kind: DrawKind,
    pub seed: u64,
    pub replication: u64,
    pub n: usize,
    pub d_z: usize,
    pub n_points: usize,
    pub n_decisions: usize,
    draws: Vec<f64>,
}

impl DrawSet {
    /// Draws for evaluation point `m` under decision `d`, `n * d_z` values.
    pub fn conditional(&self, m: usize, d: Decision) -> &[f64] {
        let block = self.n * self.d_z;
        let start = (m * self.n_decisions + d.index()) * block;
        &self.draws[start..start + block]
    }

    pub fn marginal(&self) -> &[f64] {
        &self.draws
    }

    pub fn values(&self) -> &[f64] {
        &self.draws
    }

    /// A marginal draw set from given univariate states in `[0, z_max]`.
    pub fn from_marginal(values: Vec<f64>, z_max: f64) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&z| !(0.0..=z_max).contains(&z)) {
            return Err(Error::domain(format!("marginal draws must be nonempty and lie in [0, {z_max}]")));
        }
        Ok(DrawSet {
            kind: DrawKind::Marginal { z_max },
            seed: 0,
            replication: 0,
            n: values.len(),
            d_z: 1,
            n_points: 1,
            n_decisions: 0,
            draws: values,
        })
    }
}

/// Draws `Z_i(z_m, d) ~ F_Z(·|z_m, d)` for every point and decision; the
/// importance weights are identically one.
pub fn draw_conditional(spec: &ModelSpec, eval_points: &[Vec<f64>], n: usize, seed: u64, replication: u64) -> Result<DrawSet> {
    if eval_points.is_empty() || n == 0 {
        return Err(Error::domain("conditional sampler needs at least one point and one draw"));
    }
    let sampler = TransitionSampler::new(spec)?;
    let n_decisions = spec.n_decisions();
    let d_z = spec.d_z;
    let blocks: Vec<Vec<f64>> = (0..eval_points.len() * n_decisions)
        .into_par_iter()
        .map(|job| {
            let (m, d) = (job / n_decisions, Decision(job % n_decisions));
            let z = &eval_points[m];
            let mut rng = substream(seed, &[TAG_CONDITIONAL, m as u64, d.index() as u64, replication]);
            let mut out = Vec::with_capacity(n * d_z);
            for _ in 0..n {
                for (dim, &zc) in z.iter().enumerate() {
                    out.push(sampler.sample_from(spec.post_decision(zc, d.replaces(dim)), &mut rng));
                }
            }
            out
        })
        .collect();
    Ok(DrawSet {
        kind: DrawKind::Conditional,
        seed,
        replication,
        n,
        d_z,
        n_points: eval_points.len(),
        n_decisions,
        draws: blocks.concat(),
    })
}

/// `n` i.i.d. draws from the uniform distribution on `[0, z_max]^d_z`.
pub fn draw_marginal_uniform(n: usize, d_z: usize, z_max: f64, seed: u64, replication: u64) -> Result<DrawSet> {
    if !(z_max > 0.0) || n == 0 {
        return Err(Error::domain("uniform marginal sampler needs z_max > 0 and n >= 1"));
    }
    let mut rng = substream(seed, &[TAG_MARGINAL, replication]);
    let draws = (0..n * d_z).map(|_| rng.random::<f64>() * z_max).collect();
    Ok(DrawSet {
        kind: DrawKind::Marginal { z_max },
        seed,
        replication,
        n,
        d_z,
        n_points: 1,
        n_decisions: 0,
        draws,
    })
}

/// `ŵ_i / Σ_j ŵ_j`.
pub fn normalized_weights(values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::WeightDegeneracy("all importance weights are zero".into()));
    }
    Ok(values.iter().map(|w| w / total).collect())
}

/// Extreme-value taste shocks and the smoothing scale used when maximizing
/// over them.
///
/// Simulated shocks are drawn per state from a substream keyed by the state
/// itself, so every evaluation at the same state sees the same draws. The
/// analytic case integrates the shocks in closed form, `G_λ` at the shock
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockSet {
    pub n_decisions: usize,
    /// Number of draws per state; 0 for the closed form.
    pub n_eps: usize,
    pub lambda: f64,
    pub scale: f64,
    pub seed: u64,
    pub replication: u64,
}

impl ShockSet {
    pub fn analytic(spec: &ModelSpec) -> Self {
        Self { n_decisions: spec.n_decisions(), n_eps: 0, lambda: spec.lambda_ev, scale: spec.lambda_ev, seed: 0, replication: 0 }
    }

    /// `n_eps` centred Gumbel draws of scale `lambda_ev` per decision and state.
    pub fn simulated(spec: &ModelSpec, n_eps: usize, lambda: f64, seed: u64, replication: u64) -> Result<Self> {
        if n_eps == 0 {
            return Err(Error::domain("at least one taste-shock draw is required"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::domain(format!("smoothing parameter {lambda} must be >= 0")));
        }
        Ok(Self { n_decisions: spec.n_decisions(), n_eps, lambda, scale: spec.lambda_ev, seed, replication })
    }

    pub fn is_analytic(&self) -> bool {
        self.n_eps == 0
    }

    /// Shock draws at state `z`, `n_eps` blocks of `n_decisions`; empty for the closed form.
    pub fn draws_at(&self, z: &[f64]) -> Vec<f64> {
        if self.is_analytic() {
            return Vec::new();
        }
        let mut key = vec![TAG_SHOCKS, self.replication];
        key.extend(z.iter().map(|x| x.to_bits()));
        let mut rng = substream(self.seed, &key);
        let gumbel = Gumbel::new(-EULER_GAMMA * self.scale, self.scale).expect("positive shock scale");
        (0..self.n_eps * self.n_decisions).map(|_| gumbel.sample(&mut rng)).collect()
    }
}

/// Importance weight `ŵ_Z(z'|z,d)` relative to the sampler density.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFn {
    /// Draws come from the transition itself.
    Unit,
    /// Uniform marginal draws; the constant sampler density cancels on
    /// normalization and is omitted.
    Transition(ModelSpec),
}

impl WeightFn {
    pub fn is_unit(&self) -> bool {
        matches!(self, WeightFn::Unit)
    }

    pub fn eval(&self, z_next: &[f64], z: &[f64], d: Decision) -> f64 {
        match self {
            WeightFn::Unit => 1.0,
            WeightFn::Transition(spec) => crate::model::transition_density(spec, z_next, z, d),
        }
    }
}

/// A row of normalized weights stored as (column, weight) pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub w: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.w).map(|(&i, &w)| w * x[i]).sum()
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    fn normalize(mut self, what: impl FnOnce() -> String) -> Result<Self> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::WeightDegeneracy(what()));
        }
        self.w.iter_mut().for_each(|w| *w /= total);
        Ok(self)
    }
}

/// Univariate marginal draws sorted for support queries.
#[derive(Debug, Clone)]
pub struct MarginalIndex {
    order: Vec<usize>,
    sorted: Vec<f64>,
    spec: ModelSpec,
    ln_beta: f64,
}

impl MarginalIndex {
    pub fn new(spec: &ModelSpec, draws: &DrawSet) -> Result<Self> {
        if !matches!(draws.kind, DrawKind::Marginal { .. }) {
            return Err(Error::domain("self-approximating weights need marginal draws"));
        }
        if draws.d_z != 1 {
            return Err(Error::domain("self-approximating weights are implemented for d_z = 1"));
        }
        let z = draws.marginal();
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.sort_by(|&i, &j| z[i].total_cmp(&z[j]));
        let sorted = order.iter().map(|&i| z[i]).collect();
        Ok(Self { order, sorted, spec: spec.clone(), ln_beta: spec.ln_beta_ab() })
    }

    /// Unnormalized weights of every draw in `[x, x + σ)` for post-decision
    /// state `x`, and whether the point mass at `x` fell on a draw.
    pub fn raw_row(&self, x: f64) -> (SparseRow, bool) {
        let spec = &self.spec;
        let lo = self.sorted.partition_point(|&z| z < x);
        let hi = self.sorted.partition_point(|&z| z < x + spec.sigma_z);
        let mut row = SparseRow::default();
        let mut matched = false;
        for pos in lo..hi {
            let z = self.sorted[pos];
            let w = if z == x {
                matched = true;
                spec.pi
            } else {
                let t = (z - x) / spec.sigma_z;
                (1.0 - spec.pi) * crate::model::beta_pdf_unchecked(t, spec.a, spec.b, self.ln_beta) / spec.sigma_z
            };
            if w > 0.0 {
                row.idx.push(self.order[pos]);
                row.w.push(w);
            }
        }
        (row, matched)
    }

    pub fn normalized_row(&self, x: f64) -> Result<SparseRow> {
        self.raw_row(x).0.normalize(|| format!("no draw in the transition support of post-decision state {x}"))
    }
}

/// Normalized self-approximating weights for one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightMatrix {
    /// Every row differs (the asset is kept).
    Rows(Vec<SparseRow>),
    /// All `n` rows are equal (the asset is replaced).
    Shared { row: SparseRow, n: usize },
}

impl WeightMatrix {
    pub fn n_rows(&self) -> usize {
        match self {
            WeightMatrix::Rows(rows) => rows.len(),
            WeightMatrix::Shared { n, .. } => *n,
        }
    }

    pub fn row(&self, k: usize) -> &SparseRow {
        match self {
            WeightMatrix::Rows(rows) => &rows[k],
            WeightMatrix::Shared { row, .. } => row,
        }
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|k| {
                let mut dense = vec![0.0; n_cols];
                let row = self.row(k);
                for (&i, &w) in row.idx.iter().zip(&row.w) {
                    dense[i] += w;
                }
                dense
            })
            .collect()
    }
}

/// Row `k` holds `ŵ_Z(Z_i | Z_k, d)` normalized over `i`.
pub fn self_approx_weight_matrix(spec: &ModelSpec, draws: &DrawSet, d: Decision) -> Result<WeightMatrix> {
    let index = MarginalIndex::new(spec, draws)?;
    weight_matrix_from_index(&index, draws.marginal(), d)
}

pub(crate) fn weight_matrix_from_index(index: &MarginalIndex, z: &[f64], d: Decision) -> Result<WeightMatrix> {
    if d.replaces(0) {
        let row = index.normalized_row(0.0)?;
        return Ok(WeightMatrix::Shared { row, n: z.len() });
    }
    let rows = z.par_iter().map(|&zk| index.normalized_row(zk)).collect::<Result<Vec<_>>>()?;
    Ok(WeightMatrix::Rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, Uniform};

    fn ks_uniform(mut xs: Vec<f64>, hi: f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let u = Uniform::new(0.0, hi).unwrap();
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = u.cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn substreams_are_deterministic_and_distinct() {
        let a: u64 = substream(5, &[1, 2, 3]).random();
        let b: u64 = substream(5, &[1, 2, 3]).random();
        let c: u64 = substream(5, &[1, 2, 4]).random();
        let d: u64 = substream(6, &[1, 2, 3]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn conditional_draws_respect_support() {
        let spec = ModelSpec::default();
        let ds = draw_conditional(&spec, &[vec![0.0], vec![200.0]], 1000, 3, 0).unwrap();
        assert!(ds.conditional(0, Decision(0)).iter().all(|&z| (0.0..=15.0).contains(&z)));
        assert!(ds.conditional(1, Decision(0)).iter().all(|&z| (200.0..=215.0).contains(&z)));
        assert!(ds.conditional(1, Decision(1)).iter().all(|&z| (0.0..=15.0).contains(&z)));
        let again = draw_conditional(&spec, &[vec![0.0], vec![200.0]], 1000, 3, 0).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn conditional_draws_degenerate_mass() {
        let spec = ModelSpec { pi: 1.0, ..ModelSpec::default() };
        let ds = draw_conditional(&spec, &[vec![42.0]], 200, 1, 0).unwrap();
        assert!(ds.conditional(0, Decision(0)).iter().all(|&z| z == 42.0));
    }

    #[test]
    fn conditional_mean_matches_mixture() {
        let spec = ModelSpec { pi: 0.2, ..ModelSpec::default() };
        let n = 100_000;
        let ds = draw_conditional(&spec, &[vec![0.0]], n, 11, 0).unwrap();
        let z = ds.conditional(0, Decision(0));
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 0.8 * 15.0 * 2.0 / 7.0;
        assert!((mean - target).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn marginal_draws_are_uniform() {
        let ds = draw_marginal_uniform(400, 1, 1000.0, 9, 0).unwrap();
        assert_eq!(ds.marginal().len(), 400);
        assert!(ds.marginal().iter().all(|&z| (0.0..=1000.0).contains(&z)));
        let big = draw_marginal_uniform(100_000, 1, 1000.0, 9, 1).unwrap();
        assert!(ks_uniform(big.marginal().to_vec(), 1000.0) < 0.01);
        let tiny = draw_marginal_uniform(50, 1, 1e-12, 9, 0).unwrap();
        assert!(tiny.marginal().iter().all(|&z| z <= 1e-12));
    }

    #[test]
    fn normalized_weight_examples() {
        assert_eq!(normalized_weights(&[1.0; 4]).unwrap(), vec![0.25; 4]);
        assert!(matches!(normalized_weights(&[0.0; 3]), Err(Error::WeightDegeneracy(_))));
        assert_eq!(normalized_weights(&[2.0, 0.0, 6.0]).unwrap(), vec![0.25, 0.0, 0.75]);
    }

    fn marginal(z: Vec<f64>) -> DrawSet {
        DrawSet {
            kind: DrawKind::Marginal { z_max: 1000.0 },
            seed: 0,
            replication: 0,
            n: z.len(),
            d_z: 1,
            n_points: 1,
            n_decisions: 0,
            draws: z,
        }
    }

    #[test]
    fn two_point_weight_row() {
        let spec = ModelSpec { pi: 0.0, ..ModelSpec::default() };
        let ds = marginal(vec![0.0, 7.5]);
        let dense = self_approx_weight_matrix(&spec, &ds, Decision(0)).unwrap_err();
        assert!(matches!(dense, Error::WeightDegeneracy(_)));
        let index = MarginalIndex::new(&spec, &ds).unwrap();
        let (raw, _) = index.raw_row(0.0);
        assert_eq!(raw.idx, vec![1]);
        assert_abs_diff_eq!(raw.w[0], 0.0625, epsilon = 1e-14);
        let row = index.normalized_row(0.0).unwrap();
        assert_eq!(row.w, vec![1.0]);
    }

    #[test]
    fn keep_rows_carry_point_mass() {
        let spec = ModelSpec::default();
        let ds = draw_marginal_uniform(300, 1, 1000.0, 4, 0).unwrap();
        let index = MarginalIndex::new(&spec, &ds).unwrap();
        for (k, &zk) in ds.marginal().iter().enumerate() {
            let (raw, matched) = index.raw_row(zk);
            assert!(matched);
            let pos = raw.idx.iter().position(|&i| i == k).unwrap();
            assert!(raw.w[pos] >= spec.pi);
        }
        let w = self_approx_weight_matrix(&spec, &ds, Decision(0)).unwrap();
        for k in 0..w.n_rows() {
            assert_abs_diff_eq!(w.row(k).total(), 1.0, epsilon = 1e-14);
            assert!(w.row(k).w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn empty_support_without_mass_degenerates() {
        let spec = ModelSpec { pi: 0.0, ..ModelSpec::default() };
        let ds = marginal(vec![100.0, 500.0, 900.0]);
        let err = self_approx_weight_matrix(&spec, &ds, Decision(0)).unwrap_err();
        assert!(matches!(err, Error::WeightDegeneracy(_)));
    }

    #[test]
    fn dense_matches_weight_function() {
        let spec = ModelSpec { pi: 0.05, sigma_z: 200.0, ..ModelSpec::default() };
        let ds = draw_marginal_uniform(40, 1, 1000.0, 2, 0).unwrap();
        let z = ds.marginal();
        let wf = WeightFn::Transition(spec.clone());
        for d in [Decision(0), Decision(1)] {
            let dense = self_approx_weight_matrix(&spec, &ds, d).unwrap().to_dense(z.len());
            for (k, row) in dense.iter().enumerate() {
                let raw: Vec<f64> = z.iter().map(|&zi| wf.eval(&[zi], &[z[k]], d)).collect();
                let expected = normalized_weights(&raw).unwrap();
                for (a, b) in row.iter().zip(&expected) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn simulated_shocks_are_centred_and_keyed_by_state() {
        let spec = ModelSpec::default();
        let shocks = ShockSet::simulated(&spec, 100_000, 0.0, 1, 0).unwrap();
        let eps = shocks.draws_at(&[250.0]);
        assert_eq!(eps.len(), 200_000);
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        assert!(mean.abs() < 0.01);
        assert_eq!(shocks.draws_at(&[250.0]), eps);
        assert_ne!(shocks.draws_at(&[250.5]), eps);
        assert!(ShockSet::analytic(&spec).draws_at(&[250.0]).is_empty());
    }
}
