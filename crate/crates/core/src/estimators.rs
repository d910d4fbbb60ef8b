//! Classical variance-covariance estimators.
//!
//! All estimators take a returns window laid out as rows = observations,
//! columns = assets. The raw functions operate on `DMatrix<f64>`; [`estimate`]
//! dispatches on an [`EstimatorSpec`] and wraps the result in a validated
//! [`CovMatrix`] (symmetrized, PSD-repaired).
//!
//! Shrinkage intensities follow Ledoit & Wolf: the scaled-identity target uses
//! the 2004 `b²/d²` estimate, the single-index and constant-correlation
//! targets use the asymptotic `κ/T` estimate with `κ = (π − ρ)/γ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::market_data::ReturnsMatrix;

/// Relative eigenvalue floor below which a matrix counts as indefinite.
pub const PSD_TOLERANCE: f64 = 1e-10;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Symmetric positive-semidefinite covariance matrix with asset labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    assets: Vec<String>,
    values: DMatrix<f64>,
}

impl CovMatrix {
    /// Validates symmetry, PSD-ness and non-negative diagonal.
    pub fn new(assets: Vec<String>, values: DMatrix<f64>) -> Result<Self, EstimatorError> {
        let cov = Self { assets, values };
        cov.check_invariants()?;
        Ok(cov)
    }

    /// Symmetrizes and applies [`psd_repair`] before validating. Used for
    /// estimator outputs that are PSD in exact arithmetic.
    pub fn from_estimate(assets: Vec<String>, mut values: DMatrix<f64>) -> Result<Self, EstimatorError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        symmetrize(&mut values);
        psd_repair(&mut values);
        Self::new(assets, values)
    }

    pub fn identity(assets: Vec<String>) -> Self {
        let n = assets.len();
        Self {
            assets,
            values: DMatrix::identity(n, n),
        }
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn check_invariants(&self) -> Result<(), EstimatorError> {
        let m = &self.values;
        if m.nrows() != m.ncols() || m.nrows() != self.assets.len() {
            return Err(EstimatorError::Dimension(format!(
                "{}x{} matrix for {} assets",
                m.nrows(),
                m.ncols(),
                self.assets.len()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        let asym = max_relative_asymmetry(m);
        if asym > SYMMETRY_TOLERANCE {
            return Err(EstimatorError::NotSymmetric(asym));
        }
        if m.diagonal().iter().any(|&d| d < 0.0) {
            return Err(EstimatorError::NotPsd(m.diagonal().min()));
        }
        let (lo, hi) = eigen_range(m);
        if lo < -PSD_TOLERANCE * hi.abs().max(f64::MIN_POSITIVE) {
            return Err(EstimatorError::NotPsd(lo));
        }
        Ok(())
    }
}

fn max_relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs() / scale);
        }
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// (smallest, largest) eigenvalue; (0, 0) for an empty matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (0.0, 0.0),
    }
}

/// Adds `(|λ_min| + 1e-12)·I` when the smallest eigenvalue is below
/// `-1e-10·λ_max`. Returns whether jitter was applied.
pub fn psd_repair(m: &mut DMatrix<f64>) -> bool {
    let (lo, hi) = eigen_range(m);
    if lo < -PSD_TOLERANCE * hi.abs() {
        let jitter = lo.abs() + 1e-12;
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    Sample,
    SemiCov,
    Ewma,
    ShrinkConstVar,
    ShrinkSingleFactor,
    ShrinkConstCorr,
    OracleApprox,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Sample,
        EstimatorKind::SemiCov,
        EstimatorKind::Ewma,
        EstimatorKind::ShrinkConstVar,
        EstimatorKind::ShrinkSingleFactor,
        EstimatorKind::ShrinkConstCorr,
        EstimatorKind::OracleApprox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sample => "Sample",
            EstimatorKind::SemiCov => "SemiCov",
            EstimatorKind::Ewma => "Ewma",
            EstimatorKind::ShrinkConstVar => "ShrinkConstVar",
            EstimatorKind::ShrinkSingleFactor => "ShrinkSingleFactor",
            EstimatorKind::ShrinkConstCorr => "ShrinkConstCorr",
            EstimatorKind::OracleApprox => "OracleApprox",
        }
    }

    fn shrink_target(self) -> Option<ShrinkTarget> {
        match self {
            EstimatorKind::ShrinkConstVar => Some(ShrinkTarget::ConstVar),
            EstimatorKind::ShrinkSingleFactor => Some(ShrinkTarget::SingleFactor),
            EstimatorKind::ShrinkConstCorr => Some(ShrinkTarget::ConstCorr),
            _ => None,
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EstimatorError::InvalidParameter(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShrinkTarget {
    /// Diagonal with every variance set to the mean variance.
    ConstVar,
    /// Single-index model with the equal-weighted mean return as market.
    SingleFactor,
    /// Sample variances, correlations set to their mean.
    ConstCorr,
}

/// Shrinkage coefficient: fixed, or the Ledoit-Wolf optimum for the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Shrinkage {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Observations per estimate (`k`).
    pub window: usize,
    /// EWMA decay.
    pub lambda: f64,
    /// Semi-covariance return threshold.
    pub threshold: f64,
    pub shrinkage: Shrinkage,
    pub oas_max_iter: usize,
    pub oas_tol: f64,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Sample,
            window: 30,
            lambda: 0.94,
            threshold: 0.02,
            shrinkage: Shrinkage::Auto,
            oas_max_iter: 100,
            oas_tol: 1e-8,
        }
    }
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, window: usize) -> Self {
        Self {
            kind,
            window,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.window < 2 {
            return Err(EstimatorError::InvalidParameter(format!(
                "window must be at least 2, got {}",
                self.window
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(EstimatorError::InvalidParameter(format!(
                "decay must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if let Shrinkage::Fixed(d) = self.shrinkage {
            if !(0.0..=1.0).contains(&d) {
                return Err(EstimatorError::InvalidParameter(format!(
                    "shrinkage coefficient must lie in [0, 1], got {d}"
                )));
            }
        }
        Ok(())
    }

    /// Rows of history [`estimate`] needs.
    pub fn required_history(&self) -> usize {
        match self.kind {
            EstimatorKind::Ewma => self.window + 1,
            _ => self.window,
        }
    }
}

/// Runs the configured estimator. EWMA consumes the whole history (seeded
/// with its first `window` rows); every other estimator uses the trailing
/// `window` rows.
pub fn estimate(spec: &EstimatorSpec, history: &ReturnsMatrix) -> Result<CovMatrix, EstimatorError> {
    spec.validate()?;
    let need = spec.required_history();
    if history.len() < need {
        return Err(EstimatorError::TooFewObservations {
            need,
            got: history.len(),
        });
    }
    let window = history.values.rows(history.len() - spec.window, spec.window).into_owned();
    let values = match spec.kind {
        EstimatorKind::Sample => sample_cov(&window)?,
        EstimatorKind::SemiCov => semi_cov(&window, spec.threshold)?,
        EstimatorKind::Ewma => ewma_cov(&history.values, spec.lambda, spec.window)?,
        EstimatorKind::ShrinkConstVar | EstimatorKind::ShrinkSingleFactor | EstimatorKind::ShrinkConstCorr => {
            let target = spec.kind.shrink_target().expect("shrinkage kind");
            let s = sample_cov(&window)?;
            shrink(&s, target, spec.shrinkage, Some(&window))?
        }
        EstimatorKind::OracleApprox => {
            let s = sample_cov(&window)?;
            oracle_approx(&s, spec.window, spec.oas_max_iter, spec.oas_tol)?.cov
        }
    };
    CovMatrix::from_estimate(history.assets.clone(), values)
}

fn column_means(r: &DMatrix<f64>) -> DVector<f64> {
    let k = r.nrows() as f64;
    DVector::from_iterator(r.ncols(), r.column_iter().map(|c| c.sum() / k))
}

fn centered(r: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(r);
    DMatrix::from_fn(r.nrows(), r.ncols(), |t, i| r[(t, i)] - means[i])
}

/// Unbiased sample covariance of the rows of `r` (divisor `k − 1`).
pub fn sample_cov(r: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimatorError> {
    let k = r.nrows();
    if k < 2 {
        return Err(EstimatorError::TooFewObservations { need: 2, got: k });
    }
    let x = centered(r);
    Ok(x.tr_mul(&x) / (k as f64 - 1.0))
}

/// Downside semi-covariance `(1/k) Σ min(r_i − B, 0)·min(r_j − B, 0)` over all rows.
pub fn semi_cov(r: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>, EstimatorError> {
    let k = r.nrows();
    if k == 0 {
        return Err(EstimatorError::TooFewObservations { need: 1, got: 0 });
    }
    let below = r.map(|v| (v - threshold).min(0.0));
    Ok(below.tr_mul(&below) / k as f64)
}

/// EWMA recursion `Σ_t = λΣ_{t−1} + (1−λ)(R_t − μ)(R_t − μ)'`, seeded with the
/// sample covariance of the first `seed` rows; `μ` is their mean, held fixed.
pub fn ewma_cov(history: &DMatrix<f64>, lambda: f64, seed: usize) -> Result<DMatrix<f64>, EstimatorError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(EstimatorError::InvalidParameter(format!(
            "decay must lie in (0, 1), got {lambda}"
        )));
    }
    if history.nrows() < seed + 1 {
        return Err(EstimatorError::TooFewObservations {
            need: seed + 1,
            got: history.nrows(),
        });
    }
    let seed_rows = history.rows(0, seed).into_owned();
    let mu = column_means(&seed_rows);
    let mut sigma = sample_cov(&seed_rows)?;
    for t in seed..history.nrows() {
        let dev = history.row(t).transpose() - &mu;
        sigma = sigma * lambda + (&dev * dev.transpose()) * (1.0 - lambda);
    }
    Ok(sigma)
}

/// Structured target `F` built from the sample covariance `s` (and the
/// returns window for the single-index model).
pub fn shrinkage_target(
    target: ShrinkTarget,
    s: &DMatrix<f64>,
    window: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, EstimatorError> {
    let n = s.nrows();
    match target {
        ShrinkTarget::ConstVar => {
            let mean_var = if n == 0 { 0.0 } else { s.trace() / n as f64 };
            Ok(DMatrix::identity(n, n) * mean_var)
        }
        ShrinkTarget::ConstCorr => {
            let sd = s.diagonal().map(|v| v.max(0.0).sqrt());
            let r_bar = mean_correlation(s, &sd);
            Ok(DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    s[(i, i)]
                } else {
                    r_bar * sd[i] * sd[j]
                }
            }))
        }
        ShrinkTarget::SingleFactor => {
            let r = window.ok_or_else(|| {
                EstimatorError::InvalidParameter("single-factor target needs the returns window".into())
            })?;
            if r.ncols() != n {
                return Err(EstimatorError::Dimension(format!(
                    "window has {} assets, covariance has {n}",
                    r.ncols()
                )));
            }
            let k = r.nrows();
            if k < 2 {
                return Err(EstimatorError::TooFewObservations { need: 2, got: k });
            }
            let x = centered(r);
            let mkt = market_proxy(&x);
            let denom = k as f64 - 1.0;
            let cov_mkt = x.tr_mul(&mkt) / denom;
            let var_mkt = mkt.dot(&mkt) / denom;
            Ok(DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    s[(i, i)]
                } else if var_mkt > 0.0 {
                    cov_mkt[i] * cov_mkt[j] / var_mkt
                } else {
                    0.0
                }
            }))
        }
    }
}

fn mean_correlation(s: &DMatrix<f64>, sd: &DVector<f64>) -> f64 {
    let n = s.nrows();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && sd[i] > 0.0 && sd[j] > 0.0 {
                sum += s[(i, j)] / (sd[i] * sd[j]);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Equal-weighted cross-sectional mean of (centered) returns.
fn market_proxy(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.ncols() as f64;
    DVector::from_iterator(x.nrows(), x.row_iter().map(|row| row.sum() / n))
}

/// `δF + (1−δ)S`; with [`Shrinkage::Auto`] `δ` is the Ledoit-Wolf optimum
/// estimated from `window`, clipped to `[0, 1]`.
pub fn shrink(
    s: &DMatrix<f64>,
    target: ShrinkTarget,
    delta: Shrinkage,
    window: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, EstimatorError> {
    let delta = match delta {
        Shrinkage::Fixed(d) if (0.0..=1.0).contains(&d) => d,
        Shrinkage::Fixed(d) => {
            return Err(EstimatorError::InvalidParameter(format!(
                "shrinkage coefficient must lie in [0, 1], got {d}"
            )))
        }
        Shrinkage::Auto => {
            let r = window.ok_or_else(|| {
                EstimatorError::InvalidParameter("automatic shrinkage needs the returns window".into())
            })?;
            ledoit_wolf_intensity(target, r)?
        }
    };
    let f = shrinkage_target(target, s, window)?;
    Ok(f * delta + s * (1.0 - delta))
}

/// Ledoit-Wolf optimal shrinkage intensity for `target`, clipped to `[0, 1]`.
pub fn ledoit_wolf_intensity(target: ShrinkTarget, r: &DMatrix<f64>) -> Result<f64, EstimatorError> {
    let t = r.nrows();
    if t < 2 {
        return Err(EstimatorError::TooFewObservations { need: 2, got: t });
    }
    let x = centered(r);
    let tf = t as f64;
    let n = x.ncols();
    // Maximum-likelihood covariance; the intensity formulas are stated for it.
    let sample = x.tr_mul(&x) / tf;
    let delta = match target {
        ShrinkTarget::ConstVar => {
            let mu = sample.trace() / n as f64;
            let d2 = (&sample - DMatrix::identity(n, n) * mu).norm_squared();
            let mut b_bar2 = 0.0;
            for row in x.row_iter() {
                let v = row.transpose();
                b_bar2 += (&v * v.transpose() - &sample).norm_squared();
            }
            b_bar2 /= tf * tf;
            if d2 > 0.0 {
                b_bar2.min(d2) / d2
            } else {
                0.0
            }
        }
        ShrinkTarget::SingleFactor => {
            let mkt = market_proxy(&x);
            let cov_mkt = x.tr_mul(&mkt) / tf;
            let var_mkt = mkt.dot(&mkt) / tf;
            if var_mkt <= 0.0 {
                return Ok(0.0);
            }
            let prior = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    sample[(i, i)]
                } else {
                    cov_mkt[i] * cov_mkt[j] / var_mkt
                }
            });
            let gamma = (&sample - &prior).norm_squared();
            if gamma <= 0.0 {
                return Ok(0.0);
            }
            let y = x.map(|v| v * v);
            let pi = y.tr_mul(&y).sum() / tf - sample.norm_squared();
            let rho_diag = y.map(|v| v * v).sum() / tf - sample.diagonal().norm_squared();
            let z = DMatrix::from_fn(t, n, |s, i| x[(s, i)] * mkt[s]);
            let v1 = y.tr_mul(&z) / tf - DMatrix::from_fn(n, n, |i, j| cov_mkt[i] * sample[(i, j)]);
            let mut roff1 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    roff1 += v1[(i, j)] * cov_mkt[j];
                }
                roff1 -= v1[(i, i)] * cov_mkt[i];
            }
            roff1 /= var_mkt;
            let v3 = z.tr_mul(&z) / tf - &sample * var_mkt;
            let mut roff3 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    roff3 += v3[(i, j)] * cov_mkt[i] * cov_mkt[j];
                }
                roff3 -= v3[(i, i)] * cov_mkt[i] * cov_mkt[i];
            }
            roff3 /= var_mkt * var_mkt;
            let rho = rho_diag + 2.0 * roff1 - roff3;
            (pi - rho) / gamma / tf
        }
        ShrinkTarget::ConstCorr => {
            let var = sample.diagonal();
            let sd = var.map(|v| v.max(0.0).sqrt());
            let r_bar = mean_correlation(&sample, &sd);
            let prior = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    var[i]
                } else {
                    r_bar * sd[i] * sd[j]
                }
            });
            let gamma = (&sample - &prior).norm_squared();
            if gamma <= 0.0 {
                return Ok(0.0);
            }
            let y = x.map(|v| v * v);
            let xtx = x.tr_mul(&x);
            let phi_mat = y.tr_mul(&y) / tf - xtx.component_mul(&sample) * (2.0 / tf)
                + sample.component_mul(&sample);
            let phi = phi_mat.sum();
            let x3 = x.map(|v| v * v * v);
            let help = &xtx / tf;
            let term1 = x3.tr_mul(&x) / tf;
            let mut theta_sum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j || sd[i] <= 0.0 {
                        continue;
                    }
                    let theta = term1[(i, j)] - help[(i, i)] * sample[(i, j)] - help[(i, j)] * var[i]
                        + var[i] * sample[(i, j)];
                    theta_sum += sd[j] / sd[i] * theta;
                }
            }
            let rho = phi_mat.diagonal().sum() + r_bar * theta_sum;
            (phi - rho) / gamma / tf
        }
    };
    Ok(if delta.is_finite() { delta.clamp(0.0, 1.0) } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OasResult {
    pub cov: DMatrix<f64>,
    /// Final shrinkage coefficient.
    pub rho: f64,
    /// Coefficient after each iteration.
    pub rho_path: Vec<f64>,
    pub converged: bool,
}

fn check_oas_input(s: &DMatrix<f64>, n: usize) -> Result<(), EstimatorError> {
    if n == 0 {
        return Err(EstimatorError::InvalidParameter("sample size must be at least 1".into()));
    }
    let p = s.nrows();
    if p == 0 || s.ncols() != p {
        return Err(EstimatorError::Dimension(format!("{}x{} matrix", s.nrows(), s.ncols())));
    }
    if !s.trace().is_finite() {
        return Err(EstimatorError::NonFinite);
    }
    Ok(())
}

/// One coefficient update: `ρ ↦ ρ'` evaluated at `Σ = (1−ρ)S + ρF`.
fn oas_update(s: &DMatrix<f64>, n: usize, rho: f64) -> f64 {
    let p = s.nrows();
    let (pf, nf) = (p as f64, n as f64);
    let target = DMatrix::identity(p, p) * (s.trace() / pf);
    let sigma = s * (1.0 - rho) + &target * rho;
    // Tr(ΣS) without forming the product.
    let tr_sigma_s = sigma.component_mul(&s.transpose()).sum();
    let tr2 = sigma.trace().powi(2);
    let num = (1.0 - 2.0 / pf) * tr_sigma_s + tr2;
    let den = (nf + 1.0 - 2.0 / pf) * tr_sigma_s + (1.0 - nf / pf) * tr2;
    if den != 0.0 && (num / den).is_finite() {
        (num / den).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

fn oas_result(s: &DMatrix<f64>, rho_path: Vec<f64>, converged: bool) -> OasResult {
    let p = s.nrows();
    let rho = *rho_path.last().expect("at least one iteration");
    let target = DMatrix::identity(p, p) * (s.trace() / p as f64);
    OasResult {
        cov: s * (1.0 - rho) + target * rho,
        rho,
        rho_path,
        converged,
    }
}

/// Oracle-approximating shrinkage toward `(Tr(S)/p)·I`.
///
/// The coefficient is the fixed point of the update started from `Σ_0 = S`.
/// Near the fixed point the update contracts slowly, so iterates are
/// accelerated with Steffensen's method: each step applies the update twice
/// and extrapolates. Stops once successive iterates differ by less than
/// `tol`.
pub fn oracle_approx(
    s: &DMatrix<f64>,
    n: usize,
    max_iter: usize,
    tol: f64,
) -> Result<OasResult, EstimatorError> {
    check_oas_input(s, n)?;
    let mut rho = oas_update(s, n, 0.0);
    let mut rho_path = vec![rho];
    let mut converged = false;
    while rho_path.len() < max_iter.max(1) {
        let r1 = oas_update(s, n, rho);
        let r2 = oas_update(s, n, r1);
        let curvature = r2 - 2.0 * r1 + rho;
        let jump = rho - (r1 - rho).powi(2) / curvature;
        let next = if curvature != 0.0 && jump.is_finite() && (0.0..=1.0).contains(&jump) {
            jump
        } else {
            r2
        };
        rho_path.push(next);
        let step = (next - rho).abs();
        rho = next;
        if step < tol {
            converged = true;
            break;
        }
    }
    Ok(oas_result(s, rho_path, converged))
}

/// The unaccelerated iteration `ρ_{t+1} = update(ρ_t)`, kept for comparison.
pub fn oracle_approx_plain(
    s: &DMatrix<f64>,
    n: usize,
    max_iter: usize,
    tol: f64,
) -> Result<OasResult, EstimatorError> {
    check_oas_input(s, n)?;
    let mut rho_path: Vec<f64> = Vec::new();
    let mut rho = 0.0;
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let next = oas_update(s, n, rho);
        let done = rho_path.last().is_some_and(|prev| (next - prev).abs() < tol);
        rho_path.push(next);
        rho = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(oas_result(s, rho_path, converged))
}
