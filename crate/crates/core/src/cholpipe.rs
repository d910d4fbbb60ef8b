//! Cholesky-factor series: covariance matrices → forecastable vectors → covariance.
//!
//! A rolling covariance matrix is factorized as `Σ = L·Lᵀ` and the
//! `M = N(N+1)/2` lower-triangle entries of `L` become `M` time series. Any
//! real vector placed back into `L` reconstructs a PSD matrix, which is what
//! makes unconstrained forecasts of those series usable.
//!
//! Series are ordered lower-triangular row-major: `(0,0), (1,0), (1,1), (2,0), ...`.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::estimators::{sample_cov, CovMatrix, EstimatorError};
use crate::market_data::ReturnsMatrix;

#[derive(Debug, thiserror::Error)]
pub enum CholError {
    #[error("matrix is indefinite: pivot {pivot:e} at column {column} after jitter")]
    Indefinite { column: usize, pivot: f64 },
    #[error("expected {expected} factor entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("need at least {need} return rows, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("cannot write factor series: {0}")]
    Io(#[from] std::io::Error),
}

/// Lower-triangular factor `L` with non-negative diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    assets: Vec<String>,
    lower: DMatrix<f64>,
}

impl CholFactor {
    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Entries in [`index_map`] order.
    pub fn flatten(&self) -> Vec<f64> {
        index_map(self.lower.nrows())
            .into_iter()
            .map(|(i, j)| self.lower[(i, j)])
            .collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Number of lower-triangle entries for `n` assets.
pub fn n_series(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`n_series`]; `None` when `m` is not triangular.
pub fn n_assets_for(m: usize) -> Option<usize> {
    let n = (((8 * m + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (n_series(n) == m).then_some(n)
}

/// Series column → `(row, col)` position in `L`.
pub fn index_map(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
}

/// Lower Cholesky factor of a PSD matrix. Pivots that vanish to rounding
/// level (semidefinite inputs) yield a zero column; a clearly negative pivot
/// triggers one retry with `1e-10·max(diag)·I` added.
pub fn cholesky(cov: &CovMatrix) -> Result<CholFactor, CholError> {
    let lower = cholesky_lower(cov.values())?;
    Ok(CholFactor {
        assets: cov.assets().to_vec(),
        lower,
    })
}

pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>, CholError> {
    match try_cholesky(a) {
        Ok(l) => Ok(l),
        Err(_) => {
            let max_diag = a.diagonal().max().max(0.0);
            let mut jittered = a.clone();
            for i in 0..a.nrows() {
                jittered[(i, i)] += 1e-10 * max_diag;
            }
            try_cholesky(&jittered)
        }
    }
}

fn try_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>, CholError> {
    let n = a.nrows();
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Rounding-level pivots of a semidefinite matrix land inside this band.
    let zero_band = 64.0 * f64::EPSILON * (n.max(1) as f64) * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -zero_band || !d.is_finite() {
            return Err(CholError::Indefinite { column: j, pivot: d });
        }
        if d <= zero_band {
            // Column j is (numerically) dependent on earlier ones.
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Rolling Cholesky-factor entries, one row per covariance date.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    pub assets: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// T_s × M
    pub entries: DMatrix<f64>,
}

impl FactorSeries {
    pub fn new(assets: Vec<String>, dates: Vec<NaiveDate>, entries: DMatrix<f64>) -> Result<Self, CholError> {
        let m = n_series(assets.len());
        if entries.ncols() != m {
            return Err(CholError::Length {
                expected: m,
                got: entries.ncols(),
            });
        }
        if entries.nrows() != dates.len() {
            return Err(CholError::Length {
                expected: dates.len(),
                got: entries.nrows(),
            });
        }
        Ok(Self { assets, dates, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.entries.ncols()
    }

    pub fn index_map(&self) -> Vec<(usize, usize)> {
        index_map(self.assets.len())
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.entries.row(t).iter().copied().collect()
    }

    pub fn last_row(&self) -> Option<Vec<f64>> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    /// Rows as plain vectors, the layout the forecasters train on.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|t| self.row(t)).collect()
    }

    /// `date,L_0_0,L_1_0,...` with one row per date.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CholError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.index_map().iter().map(|(i, j)| format!("L_{i}_{j}")));
        w.write_record(&header).map_err(csv_io)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.to_string()];
            rec.extend(self.entries.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// For each trailing window of `window` returns, the sample covariance's
/// Cholesky entries. Produces `T − window + 1` rows dated by each window's
/// last return.
pub fn build_factor_series(returns: &ReturnsMatrix, window: usize) -> Result<FactorSeries, CholError> {
    let t = returns.len();
    if window < 2 || t < window + 1 {
        return Err(CholError::InsufficientHistory {
            need: window.max(2) + 1,
            got: t,
        });
    }
    let n = returns.n_assets();
    let map = index_map(n);
    let rows = t - window + 1;
    let mut entries = DMatrix::zeros(rows, map.len());
    for s in 0..rows {
        let win = returns.values.rows(s, window).into_owned();
        let l = cholesky_lower(&sample_cov(&win)?)?;
        for (c, &(i, j)) in map.iter().enumerate() {
            entries[(s, c)] = l[(i, j)];
        }
    }
    FactorSeries::new(
        returns.assets.clone(),
        returns.dates[window - 1..].to_vec(),
        entries,
    )
}

/// Places the entries into `L` (diagonal clamped at 0) and returns `L·Lᵀ`.
pub fn reconstruct(factors: &[f64], assets: &[String]) -> Result<CovMatrix, CholError> {
    let n = assets.len();
    let map = index_map(n);
    if factors.len() != map.len() {
        return Err(CholError::Length {
            expected: map.len(),
            got: factors.len(),
        });
    }
    let mut l = DMatrix::zeros(n, n);
    for (&v, &(i, j)) in factors.iter().zip(&map) {
        l[(i, j)] = if i == j { v.max(0.0) } else { v };
    }
    let mut gram = &l * l.transpose();
    crate::estimators::symmetrize(&mut gram);
    Ok(CovMatrix::new(assets.to_vec(), gram)?)
}
