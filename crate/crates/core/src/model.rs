//! The replacement decision process: per-period utility, the Beta-mixture
//! usage transition and its multivariate (additive or interacting) extension.
//!
//! Each of the `d_z` assets carries one usage state and one binary choice,
//! keep (0) or replace (1). Composite decisions are numbered `0..2^d_z` with
//! bit `i` holding the choice for asset `i`.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub beta: f64,
    /// Replacement cost in utils.
    pub rc: f64,
    /// Operating cost per 1000 units of usage.
    pub theta_c: f64,
    /// Scale of the extreme-value taste shocks.
    pub lambda_ev: f64,
    /// Width of the usage increment support.
    pub sigma_z: f64,
    pub a: f64,
    pub b: f64,
    /// Probability of zero usage in a period.
    pub pi: f64,
    pub d_z: usize,
    /// Cost interaction between the two assets (bivariate model only).
    pub kappa: f64,
    pub z_min: f64,
    pub z_max_domain: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            beta: 0.95,
            rc: 10.0,
            theta_c: 2.0,
            lambda_ev: 1.0,
            sigma_z: 15.0,
            a: 2.0,
            b: 5.0,
            pi: 1e-9,
            d_z: 1,
            kappa: 0.0,
            z_min: 0.0,
            z_max_domain: 1000.0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("model.{field}"), msg))
            }
        };
        check(self.beta > 0.0 && self.beta < 1.0, "beta", "discount factor must lie in (0,1)")?;
        check(self.rc >= 0.0 && self.rc.is_finite(), "rc", "replacement cost must be finite and >= 0")?;
        check(self.theta_c.is_finite(), "theta_c", "cost slope must be finite")?;
        check(self.lambda_ev > 0.0 && self.lambda_ev.is_finite(), "lambda_ev", "taste-shock scale must be > 0")?;
        check(self.sigma_z > 0.0 && self.sigma_z.is_finite(), "sigma_z", "transition width must be > 0")?;
        check(self.a > 0.0 && self.a.is_finite(), "a", "Beta shape must be > 0")?;
        check(self.b > 0.0 && self.b.is_finite(), "b", "Beta shape must be > 0")?;
        check((0.0..1.0).contains(&self.pi), "pi", "point mass must lie in [0,1)")?;
        check(self.d_z >= 1 && self.d_z <= 16, "d_z", "state dimension must be in 1..=16")?;
        check(
            self.kappa == 0.0 || self.d_z == 2,
            "kappa",
            "interaction term is only defined for d_z = 2",
        )?;
        check(
            self.z_max_domain > self.z_min && self.z_min.is_finite() && self.z_max_domain.is_finite(),
            "z_max_domain",
            "domain upper bound must exceed z_min",
        )?;
        Ok(())
    }

    /// Number of composite decisions, `2^d_z`.
    pub fn n_decisions(&self) -> usize {
        1 << self.d_z
    }

    pub fn decisions(&self) -> impl Iterator<Item = Decision> {
        (0..self.n_decisions()).map(Decision)
    }

    /// Operating cost `c(z) = theta_c * 0.001 * z`.
    pub fn cost(&self, z: f64) -> f64 {
        self.theta_c * 0.001 * z
    }

    fn utility_1d(&self, z: f64, replace: bool) -> f64 {
        if replace {
            -self.rc - self.cost(0.0)
        } else {
            -self.cost(z)
        }
    }

    /// Utility without domain checks. `z` must have length `d_z`.
    pub fn utility_unchecked(&self, z: &[f64], d: Decision) -> f64 {
        let mut total = 0.0;
        for (dim, &zi) in z.iter().enumerate() {
            total += self.utility_1d(zi, d.replaces(dim));
        }
        if self.kappa != 0.0 && self.d_z == 2 {
            total -= self.kappa * self.utility_1d(z[0], d.replaces(0)) * self.utility_1d(z[1], d.replaces(1));
        }
        total
    }

    /// Utilities of all decisions at `z`, written into `out` (length `2^d_z`).
    pub fn utilities_into(&self, z: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.utility_unchecked(z, Decision(k));
        }
    }

    pub fn utilities(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_decisions()];
        self.utilities_into(z, &mut out);
        out
    }

    /// State of asset `dim` after the decision: usage is kept or reset to zero.
    pub fn post_decision(&self, z: f64, replace: bool) -> f64 {
        if replace {
            0.0
        } else {
            z
        }
    }

    /// Continuous part `f_+(z_next | x)` of the usage transition from post-decision state `x`.
    pub fn increment_density(&self, z_next: f64, x: f64) -> f64 {
        let t = (z_next - x) / self.sigma_z;
        beta_pdf_unchecked(t, self.a, self.b, self.ln_beta_ab()) / self.sigma_z
    }

    pub(crate) fn ln_beta_ab(&self) -> f64 {
        ln_beta(self.a, self.b)
    }

    /// Per-asset transition density with respect to (point mass at x) + Lebesgue.
    pub fn transition_density_1d(&self, z_next: f64, z: f64, replace: bool) -> f64 {
        let x = self.post_decision(z, replace);
        if z_next == x {
            self.pi
        } else {
            (1.0 - self.pi) * self.increment_density(z_next, x)
        }
    }

    fn check_state(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d_z {
            return Err(Error::domain(format!("state has {} components, expected {}", z.len(), self.d_z)));
        }
        if let Some(bad) = z.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::domain(format!("state component {bad} is negative")));
        }
        Ok(())
    }
}

/// Composite decision index; bit `i` set means asset `i` is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Decision(pub usize);

impl Decision {
    pub fn from_choices(replace: &[bool]) -> Self {
        Decision(replace.iter().enumerate().fold(0, |acc, (i, &r)| acc | (usize::from(r) << i)))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn replaces(self, dim: usize) -> bool {
        (self.0 >> dim) & 1 == 1
    }

    pub fn choices(self, d_z: usize) -> Vec<bool> {
        (0..d_z).map(|i| self.replaces(i)).collect()
    }
}

pub fn per_period_utility(spec: &ModelSpec, z: &[f64], d: Decision) -> Result<f64> {
    spec.check_state(z)?;
    if d.0 >= spec.n_decisions() {
        return Err(Error::domain(format!("decision {} out of range", d.0)));
    }
    Ok(spec.utility_unchecked(z, d))
}

/// Transition density of `z_next` given `(z, d)`; the zero-usage atom is
/// reported as its probability mass. Product over assets.
pub fn transition_density(spec: &ModelSpec, z_next: &[f64], z: &[f64], d: Decision) -> f64 {
    z_next
        .iter()
        .zip(z)
        .enumerate()
        .map(|(dim, (&zn, &zc))| spec.transition_density_1d(zn, zc, d.replaces(dim)))
        .product()
}

/// Draws next-period usage for one or more assets.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    increment: Beta<f64>,
    sigma_z: f64,
    pi: f64,
}

impl TransitionSampler {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let increment = Beta::new(spec.a, spec.b).map_err(|e| Error::domain(format!("Beta({}, {}): {e}", spec.a, spec.b)))?;
        Ok(Self { increment, sigma_z: spec.sigma_z, pi: spec.pi })
    }

    /// One draw from the transition of a single asset with post-decision state `x`.
    pub fn sample_from<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.pi {
            x
        } else {
            x + self.sigma_z * self.increment.sample(rng)
        }
    }
}

pub fn sample_transition<R: Rng + ?Sized>(spec: &ModelSpec, z: &[f64], d: Decision, rng: &mut R) -> Result<Vec<f64>> {
    spec.check_state(z)?;
    let sampler = TransitionSampler::new(spec)?;
    Ok(z
        .iter()
        .enumerate()
        .map(|(dim, &zc)| sampler.sample_from(spec.post_decision(zc, d.replaces(dim)), rng))
        .collect())
}

pub fn beta_pdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!("Beta shapes must be positive, got ({a}, {b})")));
    }
    Ok(beta_pdf_unchecked(x, a, b, ln_beta(a, b)))
}

/// Beta density on the open interval (0,1), zero elsewhere.
pub(crate) fn beta_pdf_unchecked(x: f64, a: f64, b: f64, ln_b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b).exp()
}
