//! Gauss-Jacobi quadrature for Beta-distributed increments (Golub-Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes on `[0,1]` and probability weights for `E[h(X)]`, `X ~ Beta(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BetaQuadrature {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("quadrature needs at least one node"));
        }
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::domain(format!("Beta shapes must be positive, got ({a}, {b})")));
        }
        // Jacobi weight (1-x)^al (1+x)^be on [-1,1] maps to Beta(be+1, al+1) under t=(x+1)/2.
        let (al, be) = (b - 1.0, a - 1.0);
        let s = al + be;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let kf = k as f64;
            let diag = if k == 0 {
                (be - al) / (s + 2.0)
            } else {
                (be * be - al * al) / ((2.0 * kf + s) * (2.0 * kf + s + 2.0))
            };
            jacobi[(k, k)] = diag;
            if k + 1 < n {
                let m = kf + 1.0;
                let b2 = if k == 0 {
                    4.0 * (1.0 + al) * (1.0 + be) / ((2.0 + s).powi(2) * (3.0 + s))
                } else {
                    let t = 2.0 * m + s;
                    4.0 * m * (m + al) * (m + be) * (m + s) / (t * t * (t + 1.0) * (t - 1.0))
                };
                let off = b2.sqrt();
                jacobi[(k, k + 1)] = off;
                jacobi[(k + 1, k)] = off;
            }
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| ((eig.eigenvalues[i] + 1.0) / 2.0, eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * h(t)).sum()
    }
}
