//! One-step-ahead forecasting of Cholesky factor series.
//!
//! Three neural backends share one training loop ([`train::fit`]): a plain
//! LSTM regressor, a DeepVAR-style per-series Gaussian model and a
//! GPVAR-style joint Gaussian with low-rank covariance. A persistence
//! baseline returns the last observed row.

pub mod copula;
pub mod deepvar;
pub mod gpvar;
pub mod lstm;
pub mod params;
pub mod train;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use deepvar::DeepVar;
pub use gpvar::GpVar;
pub use lstm::{lstm_forward, lstm_train, LstmParams};
pub use train::{derive_seed, Trainable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("series too short: need {need} rows, got {got}")]
    SeriesTooShort { need: usize, got: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty series")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Number of trailing targets held out for validation.
    pub validation_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.01,
            batch_size: 8,
            seq_len: 15,
            hidden: vec![20],
            seed: 0,
            validation_len: 60,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: &str| Err(ForecastError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch_size and seq_len must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbConfig {
    /// Units per layer; the trunk has two layers of this size.
    pub hidden: usize,
    pub scaling: bool,
    pub copula: bool,
    pub low_rank: bool,
    pub rank: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Width of the learned per-series embedding (GPVAR only).
    pub embedding_dim: usize,
    /// Score a random subset of this many series per training sample (GPVAR only).
    pub series_subset: Option<usize>,
}

impl Default for ProbConfig {
    fn default() -> Self {
        Self {
            hidden: 10,
            scaling: true,
            copula: false,
            low_rank: false,
            rank: 2,
            mc_samples: 100,
            seed: 0,
            embedding_dim: 2,
            series_subset: None,
        }
    }
}

impl ProbConfig {
    pub fn validate(&self, n_series: usize) -> Result<(), ForecastError> {
        let bad = |m: String| Err(ForecastError::InvalidConfig(m));
        if n_series == 0 {
            return Err(ForecastError::Empty);
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1".into());
        }
        if self.low_rank && self.rank >= n_series {
            return bad(format!("rank {} must be below the series count {n_series}", self.rank));
        }
        if self.series_subset == Some(0) {
            return bad("series_subset must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-epoch losses of one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl TrainReport {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.val_loss.last().copied()
    }

    /// `epoch,train_loss,val_loss`; the last column is empty without validation.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss"]).map_err(std::io::Error::other)?;
        for (k, t) in self.train_loss.iter().enumerate() {
            let v = self.val_loss.get(k).map(f64::to_string).unwrap_or_default();
            w.write_record([k.to_string(), t.to_string(), v]).map_err(std::io::Error::other)?;
        }
        w.flush()
    }
}

/// Last observed row.
pub fn persistence_forecast(series: &[Vec<f64>]) -> Result<Vec<f64>, ForecastError> {
    series.last().cloned().ok_or(ForecastError::Empty)
}

/// Forecasting model family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForecasterSpec {
    Persistence,
    Lstm {
        #[serde(default)]
        train: TrainConfig,
    },
    DeepVar {
        #[serde(default)]
        train: TrainConfig,
        #[serde(default)]
        prob: ProbConfig,
    },
    GpVar {
        #[serde(default)]
        train: TrainConfig,
        #[serde(default)]
        prob: ProbConfig,
    },
}

/// Output of [`ForecasterSpec::forecast`].
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub values: Vec<f64>,
    pub report: Option<TrainReport>,
}

impl ForecasterSpec {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Persistence => "persistence",
            Self::Lstm { .. } => "lstm",
            Self::DeepVar { .. } => "deepvar",
            Self::GpVar { .. } => "gpvar",
        }
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        match self {
            Self::Persistence => None,
            Self::Lstm { train } | Self::DeepVar { train, .. } | Self::GpVar { train, .. } => Some(train),
        }
    }

    pub fn train_config_mut(&mut self) -> Option<&mut TrainConfig> {
        match self {
            Self::Persistence => None,
            Self::Lstm { train } | Self::DeepVar { train, .. } | Self::GpVar { train, .. } => Some(train),
        }
    }

    pub fn prob_config(&self) -> Option<&ProbConfig> {
        match self {
            Self::DeepVar { prob, .. } | Self::GpVar { prob, .. } => Some(prob),
            _ => None,
        }
    }

    /// Rows of history the model needs before it can be trained.
    pub fn min_rows(&self) -> usize {
        self.train_config()
            .map_or(1, |t| t.seq_len + t.validation_len + 1)
    }

    /// Trains a fresh model on `series` (rows = time) and forecasts the next
    /// row. `seed` replaces the configured training and sampling seeds.
    ///
    /// Neural models see the series divided by its root-mean-square entry so
    /// that training is insensitive to the overall return scale.
    pub fn forecast(&self, series: &[Vec<f64>], seed: u64) -> Result<Forecast, ForecastError> {
        let m = series.first().map_or(0, Vec::len);
        if series.is_empty() || m == 0 {
            return Err(ForecastError::Empty);
        }
        if series.iter().any(|r| r.len() != m) {
            return Err(ForecastError::Shape("ragged series".into()));
        }
        if series.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite("input series".into()));
        }
        if let Self::Persistence = self {
            return Ok(Forecast {
                values: persistence_forecast(series)?,
                report: None,
            });
        }
        let count = (series.len() * m) as f64;
        let rms = (series.iter().flatten().map(|v| v * v).sum::<f64>() / count).sqrt();
        let scale = if rms > 0.0 { rms } else { 1.0 };
        let scaled: Vec<Vec<f64>> = series.iter().map(|r| r.iter().map(|v| v / scale).collect()).collect();
        let (values, report) = match self {
            Self::Persistence => unreachable!(),
            Self::Lstm { train } => {
                let cfg = TrainConfig { seed, ..train.clone() };
                let (net, report) = lstm_train(&scaled, &cfg)?;
                let tail = &scaled[scaled.len() - cfg.seq_len..];
                (lstm_forward(&net, tail)?, report)
            }
            Self::DeepVar { train, prob } => {
                let cfg = TrainConfig { seed, ..train.clone() };
                let (model, report) = DeepVar::train(&scaled, prob, &cfg)?;
                (model.forecast(&scaled, cfg.seq_len, prob.mc_samples, seed)?, report)
            }
            Self::GpVar { train, prob } => {
                let cfg = TrainConfig { seed, ..train.clone() };
                let (model, report) = GpVar::train(&scaled, prob, &cfg)?;
                (model.forecast(&scaled, cfg.seq_len, prob.mc_samples, seed)?, report)
            }
        };
        let values: Vec<f64> = values.into_iter().map(|v| v * scale).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite("forecast".into()));
        }
        Ok(Forecast {
            values,
            report: Some(report),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persistence_returns_last_row() {
        let s = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(persistence_forecast(&s).unwrap(), vec![3.0, 4.0]);
        assert_eq!(persistence_forecast(&vec![vec![5.0]; 4]).unwrap(), vec![5.0]);
        assert_eq!(persistence_forecast(&[]), Err(ForecastError::Empty));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let p = ProbConfig {
            low_rank: true,
            rank: 3,
            ..ProbConfig::default()
        };
        assert!(p.validate(3).is_err());
        assert!(p.validate(4).is_ok());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ForecasterSpec::GpVar {
            train: TrainConfig::default(),
            prob: ProbConfig {
                low_rank: true,
                ..ProbConfig::default()
            },
        };
        let text = toml::to_string(&spec).unwrap();
        let back: ForecasterSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let lstm: ForecasterSpec = toml::from_str("family = \"lstm\"\n[train]\nhidden = [5]\n").unwrap();
        assert_eq!(lstm.train_config().unwrap().hidden, vec![5]);
        assert_eq!(lstm.train_config().unwrap().epochs, 150);
    }

    #[test]
    fn report_csv() {
        let r = TrainReport {
            train_loss: vec![1.0, 0.5],
            val_loss: vec![2.0],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n0,1,2\n1,0.5,\n");
    }
}
