//! Dense polynomial least-squares regression on standardized inputs.
//!
//! Backs the equilibrium surrogates: full multivariate polynomials of a
//! given total degree (all interaction terms), fit by SVD least squares.
//! Inputs are mapped to [-1, 1] per coordinate for conditioning.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A fitted multivariate polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    degree: u32,
    /// Per-input closed intervals used for standardization.
    bounds: Vec<(f64, f64)>,
    /// Multi-indices, one per term, aligned with `coeffs`.
    exponents: Vec<Vec<u32>>,
    coeffs: Vec<f64>,
}

/// All exponent multi-indices with total degree at most `degree`.
pub fn multi_indices(n_vars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; n_vars];
    fn rec(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, var: usize, remaining: u32) {
        if var == current.len() {
            out.push(current.clone());
            return;
        }
        for e in 0..=remaining {
            current[var] = e;
            rec(out, current, var + 1, remaining - e);
        }
        current[var] = 0;
    }
    rec(&mut out, &mut current, 0, degree);
    out
}

impl Polynomial {
    /// Least-squares fit of a degree-`degree` polynomial to `(xs, ys)`.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], degree: u32, bounds: &[(f64, f64)]) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidParameter(format!(
                "polynomial fit needs matching nonempty samples, got {}/{}",
                xs.len(),
                ys.len()
            )));
        }
        let n_vars = bounds.len();
        if xs[0].len() != n_vars {
            return Err(Error::DimensionMismatch(format!(
                "sample dimension {} vs {} bounds",
                xs[0].len(),
                n_vars
            )));
        }
        let exponents = multi_indices(n_vars, degree);
        if xs.len() < exponents.len() {
            return Err(Error::InvalidParameter(format!(
                "{} samples cannot determine {} polynomial terms",
                xs.len(),
                exponents.len()
            )));
        }
        let mut proto = Polynomial {
            degree,
            bounds: bounds.to_vec(),
            exponents,
            coeffs: Vec::new(),
        };
        let m = xs.len();
        let t = proto.exponents.len();
        let mut a = DMatrix::zeros(m, t);
        for (i, x) in xs.iter().enumerate() {
            let row = proto.features(x);
            for (j, v) in row.into_iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        let b = DVector::from_column_slice(ys);
        let svd = a.svd(true, true);
        let sol: DVector<f64> = svd
            .solve(&b, 1e-12)
            .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;
        proto.coeffs = sol.iter().copied().collect();
        Ok(proto)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                if hi > lo {
                    2.0 * (v - lo) / (hi - lo) - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let t = self.standardize(x);
        // Precompute powers per variable up to the degree.
        let mut pows: Vec<Vec<f64>> = Vec::with_capacity(t.len());
        for &ti in &t {
            let mut p = Vec::with_capacity(self.degree as usize + 1);
            let mut acc = 1.0;
            for _ in 0..=self.degree {
                p.push(acc);
                acc *= ti;
            }
            pows.push(p);
        }
        self.exponents
            .iter()
            .map(|exp| {
                exp.iter()
                    .enumerate()
                    .map(|(v, &e)| pows[v][e as usize])
                    .product()
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.features(x)
            .iter()
            .zip(&self.coeffs)
            .map(|(f, c)| f * c)
            .sum()
    }

    /// Analytic partial derivative with respect to input `dim`.
    pub fn partial(&self, x: &[f64], dim: usize) -> f64 {
        let t = self.standardize(x);
        let (lo, hi) = self.bounds[dim];
        let chain = if hi > lo { 2.0 / (hi - lo) } else { 0.0 };
        let mut acc = 0.0;
        for (exp, &c) in self.exponents.iter().zip(&self.coeffs) {
            let e = exp[dim];
            if e == 0 {
                continue;
            }
            let mut term = c * e as f64 * t[dim].powi(e as i32 - 1);
            for (v, &ev) in exp.iter().enumerate() {
                if v != dim {
                    term *= t[v].powi(ev as i32);
                }
            }
            acc += term;
        }
        acc * chain
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

/// Coefficient of determination, `1 - SSE/SST`. Degenerate targets (zero
/// variance) score 1 when the predictions match them and 0 otherwise.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sst: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y).powi(2))
        .sum();
    let scale = targets.iter().map(|y| y * y).sum::<f64>().max(1e-300);
    if sst <= 1e-24 * scale {
        if sse <= 1e-18 * scale {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - sse / sst
    }
}
