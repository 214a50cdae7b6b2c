//! Log-sum-exp surrogate for the maximum and its derivatives.
//!
//! `G_λ(r) = λ log Σ exp(r_d / λ)` is the expected maximum of `r + ε` when
//! the shocks are i.i.d. centred Gumbel with scale `λ`. At `λ = 0` it is the
//! hard maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the smoothing scale.
pub const LAMBDA_BAR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParam {
    lambda: f64,
}

impl SmoothingParam {
    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_cap(lambda, LAMBDA_BAR)
    }

    pub fn with_cap(lambda: f64, cap: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda <= cap) {
            return Err(Error::domain(format!("smoothing parameter {lambda} outside [0, {cap}]")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(self) -> f64 {
        self.lambda
    }

    pub fn is_smooth(self) -> bool {
        self.lambda > 0.0
    }
}

fn max_of(r: &[f64]) -> f64 {
    r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `G_λ(r)` without the emptiness check.
#[inline]
pub fn smooth_max_unchecked(r: &[f64], lambda: f64) -> f64 {
    let m = max_of(r);
    if lambda == 0.0 || !m.is_finite() {
        return m;
    }
    let s: f64 = r.iter().map(|&x| ((x - m) / lambda).exp()).sum();
    m + lambda * s.ln()
}

pub fn smooth_max(r: &[f64], lambda: f64) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::domain("smooth_max of an empty vector"));
    }
    Ok(smooth_max_unchecked(r, lambda))
}

/// Writes `∇G_λ(r)` into `out` and returns `G_λ(r)`.
///
/// At `λ = 0` the gradient is the indicator of the first maximizer.
#[inline]
pub fn smooth_max_with_grad(r: &[f64], lambda: f64, out: &mut [f64]) -> f64 {
    let m = max_of(r);
    if lambda == 0.0 {
        let arg = r.iter().position(|&x| x == m).unwrap_or(0);
        out.iter_mut().for_each(|g| *g = 0.0);
        out[arg] = 1.0;
        return m;
    }
    let mut s = 0.0;
    for (g, &x) in out.iter_mut().zip(r) {
        *g = ((x - m) / lambda).exp();
        s += *g;
    }
    let inv = 1.0 / s;
    out.iter_mut().for_each(|g| *g *= inv);
    m + lambda * s.ln()
}

pub fn smooth_max_grad(r: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    if !r.is_empty() {
        smooth_max_with_grad(r, lambda, &mut out);
    }
    out
}

/// `∂G_λ(r)/∂λ = log Σ e^{r̄/λ} − Σ e^{r̄/λ}(r̄/λ) / Σ e^{r̄/λ}` with `r̄ = r − max r`.
pub fn smooth_max_lambda_deriv(r: &[f64], lambda: f64) -> f64 {
    let m = max_of(r);
    let mut s = 0.0;
    let mut weighted = 0.0;
    for &x in r {
        let t = (x - m) / lambda;
        let e = t.exp();
        s += e;
        if e > 0.0 {
            weighted += e * t;
        }
    }
    s.ln() - weighted / s
}

/// Conditional choice probabilities for the extreme-value model.
pub fn choice_probabilities(values: &[f64], lambda: f64) -> Vec<f64> {
    smooth_max_grad(values, lambda)
}
