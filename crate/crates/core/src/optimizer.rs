//! Long-only minimum-variance weights with an optional turnover penalty.
//!
//! The objective `ωᵀΣω + c·‖ω − prev‖₁` is minimized over the unit simplex
//! by proximal gradient descent with a constant `1/L` step. The proximal map
//! of the L1 turnover term restricted to the simplex is evaluated exactly:
//! for a multiplier `τ` each coordinate is the non-negative part of the
//! soft-thresholding of `yᵢ + τ` towards `prevᵢ`, and `τ` is found by
//! bisection so the coordinates sum to one. Without a cost term this is the
//! Euclidean simplex projection, computed by the sort-based method.

use nalgebra::DMatrix;

use crate::estimators::{eigen_range, CovMatrix};
use crate::market_data::ReturnsMatrix;

/// Commission rate applied as a turnover penalty when previous weights exist.
pub const DEFAULT_COST_RATE: f64 = 0.005;
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizerError {
    #[error("covariance matrix contains non-finite values")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("weights left the simplex (sum {sum}, min {min})")]
    Infeasible { sum: f64, min: f64 },
    #[error("empty returns window")]
    EmptyWindow,
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    assets: Vec<String>,
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(assets: Vec<String>, weights: Vec<f64>) -> Result<Self, OptimizerError> {
        if assets.len() != weights.len() {
            return Err(OptimizerError::Dimension(format!(
                "{} assets but {} weights",
                assets.len(),
                weights.len()
            )));
        }
        check_simplex(&weights)?;
        Ok(Self { assets, weights })
    }

    pub fn uniform(assets: Vec<String>) -> Self {
        let n = assets.len();
        Self {
            weights: vec![1.0 / n as f64; n],
            assets,
        }
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, asset: &str) -> Option<f64> {
        self.assets.iter().position(|a| a == asset).map(|i| self.weights[i])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_simplex(w: &[f64]) -> Result<(), OptimizerError> {
    let sum: f64 = w.iter().sum();
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    if w.is_empty() || (sum - 1.0).abs() > SIMPLEX_TOLERANCE || min < 0.0 || !sum.is_finite() {
        return Err(OptimizerError::Infeasible { sum, min });
    }
    Ok(())
}

/// Mean daily return per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedReturns {
    pub assets: Vec<String>,
    pub mu: Vec<f64>,
}

pub fn mean_historical_returns(window: &ReturnsMatrix) -> Result<ExpectedReturns, OptimizerError> {
    let v = &window.values;
    if v.nrows() == 0 {
        return Err(OptimizerError::EmptyWindow);
    }
    let k = v.nrows() as f64;
    let mu = v.column_iter().map(|c| c.sum() / k).collect();
    Ok(ExpectedReturns {
        assets: window.assets.clone(),
        mu,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinVarianceOptions {
    pub max_iter: usize,
    /// Minimum objective improvement that resets the patience counter.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for MinVarianceOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tolerance: 1e-12,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub weights: WeightVector,
    pub objective: f64,
    pub iterations: usize,
}

/// `ωᵀΣω + cost_rate·Σ|ωᵢ − prevᵢ|`.
pub fn objective(cov: &DMatrix<f64>, w: &[f64], prev: Option<&[f64]>, cost_rate: f64) -> f64 {
    let n = w.len();
    let mut quad = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += cov[(i, j)] * w[j];
        }
        quad += w[i] * row;
    }
    let turnover = prev.map_or(0.0, |p| w.iter().zip(p).map(|(a, b)| (a - b).abs()).sum());
    quad + cost_rate * turnover
}

/// Minimum-variance weights with default options. `prev` holds the current
/// portfolio weights (non-negative, summing to at most one); the turnover
/// penalty is ignored without it.
pub fn min_variance(cov: &CovMatrix, prev: Option<&[f64]>, cost_rate: f64) -> Result<WeightVector, OptimizerError> {
    min_variance_with(cov, prev, cost_rate, &MinVarianceOptions::default()).map(|s| s.weights)
}

pub fn min_variance_with(
    cov: &CovMatrix,
    prev: Option<&[f64]>,
    cost_rate: f64,
    opts: &MinVarianceOptions,
) -> Result<Solution, OptimizerError> {
    let sigma = cov.values();
    let n = sigma.nrows();
    if n == 0 {
        return Err(OptimizerError::Dimension("empty covariance matrix".into()));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(OptimizerError::NonFinite);
    }
    if !(cost_rate.is_finite() && cost_rate >= 0.0) {
        return Err(OptimizerError::InvalidParameter(format!("cost rate {cost_rate}")));
    }
    if let Some(p) = prev {
        if p.len() != n {
            return Err(OptimizerError::Dimension(format!("{} previous weights for {n} assets", p.len())));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OptimizerError::InvalidParameter("previous weights must be finite and non-negative".into()));
        }
    }
    let cost = if prev.is_some() { cost_rate } else { 0.0 };

    // Work on Σ / max diag; the argmin is unchanged when the cost is scaled alike.
    let scale = sigma.diagonal().max();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let s = sigma / scale;
    let c = cost / scale;
    let lipschitz = 2.0 * eigen_range(&s).1.max(0.0);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let uniform = vec![1.0 / n as f64; n];
    let mut candidates = vec![uniform];
    if let Some(p) = prev {
        if (p.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE {
            candidates.push(p.to_vec());
        }
    }
    let eval = |w: &[f64]| objective(&s, w, prev, c);
    let (mut best, mut best_obj) = candidates
        .into_iter()
        .map(|w| {
            let o = eval(&w);
            (w, o)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one candidate");

    let mut w = best.clone();
    let mut stall = 0;
    let mut iterations = 0;
    let mut grad = vec![0.0; n];
    let mut y = vec![0.0; n];
    while iterations < opts.max_iter && stall < opts.patience {
        iterations += 1;
        for i in 0..n {
            grad[i] = 2.0 * (0..n).map(|j| s[(i, j)] * w[j]).sum::<f64>();
            y[i] = w[i] - step * grad[i];
        }
        w = match prev {
            Some(p) if c > 0.0 => prox_turnover_simplex(&y, p, step * c),
            _ => project_simplex(&y),
        };
        let obj = eval(&w);
        if obj < best_obj - opts.tolerance {
            stall = 0;
        } else {
            stall += 1;
        }
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&w);
        }
    }

    for v in best.iter_mut() {
        *v = v.max(0.0);
    }
    let total: f64 = best.iter().sum();
    best.iter_mut().for_each(|v| *v /= total);
    check_simplex(&best)?;
    let objective = objective(sigma, &best, prev, cost);
    Ok(Solution {
        weights: WeightVector::new(cov.assets().to_vec(), best)?,
        objective,
        iterations,
    })
}

/// Euclidean projection onto the unit simplex (sort-based).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in u.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// `argmin_{w ∈ Δ} ½‖w − y‖² + κ‖w − prev‖₁`.
pub fn prox_turnover_simplex(y: &[f64], prev: &[f64], kappa: f64) -> Vec<f64> {
    let coord = |tau: f64, i: usize| {
        let z = y[i] + tau;
        let v = if z > prev[i] + kappa {
            z - kappa
        } else if z < prev[i] - kappa {
            z + kappa
        } else {
            prev[i]
        };
        v.max(0.0)
    };
    let total = |tau: f64| (0..y.len()).map(|i| coord(tau, i)).sum::<f64>();
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let p_max = prev.iter().copied().fold(0.0, f64::max);
    // Every coordinate is zero at `lo` and at least one at `hi`.
    let mut lo = -y_max - kappa - p_max - 1.0;
    let mut hi = 1.0 + kappa + p_max - y_min;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut w: Vec<f64> = (0..y.len()).map(|i| coord(hi, i)).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}
