//! Synthetic mixed stock/crypto dataset.
//!
//! Daily log returns follow a one-factor model whose volatility scale and
//! factor correlation switch between a calm and a stressed regime. The regime
//! is a two-state Markov chain with high persistence, so recent covariance is
//! informative about the next period. Stocks do not trade on weekends: their
//! cells are left empty in the price file and their prices do not move.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::market_data::{AssetClass, CapPanel, ClassMap, DataError, PricePanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub start: NaiveDate,
    pub n_stock: usize,
    pub n_crypto: usize,
    /// Probability of staying in the current regime from one day to the next.
    pub persistence: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 600,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            n_stock: 3,
            n_crypto: 3,
            persistence: 0.985,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Regime {
    vol_scale: f64,
    correlation: f64,
}

const REGIMES: [Regime; 2] = [
    Regime {
        vol_scale: 1.0,
        correlation: 0.2,
    },
    Regime {
        vol_scale: 2.5,
        correlation: 0.7,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub classes: Vec<AssetClass>,
    /// Quoted prices; NaN where the asset did not trade.
    pub prices: DMatrix<f64>,
    pub caps: DMatrix<f64>,
    /// Regime index per day (0 calm, 1 stressed).
    pub regimes: Vec<u8>,
}

/// Paths written by [`SynthDataset::write_to_dir`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub prices: PathBuf,
    pub caps: PathBuf,
    pub classes: PathBuf,
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

pub fn generate(cfg: &SynthConfig) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_stock + cfg.n_crypto;
    let mut assets = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for k in 0..cfg.n_stock {
        assets.push(format!("STK{}", k + 1));
        classes.push(AssetClass::Stock);
    }
    for k in 0..cfg.n_crypto {
        assets.push(format!("CRY{}", k + 1));
        classes.push(AssetClass::Crypto);
    }
    let (vol, drift, start_price, supply): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| {
            let k = if i < cfg.n_stock { i } else { i - cfg.n_stock } as f64;
            match classes[i] {
                AssetClass::Stock => (0.010 + 0.003 * k, 0.0003, 50.0 + 40.0 * k, 2e9 / (1.0 + k)),
                AssetClass::Crypto => (0.030 + 0.008 * k, 0.0006, 200.0 / (1.0 + 4.0 * k), 5e8 / (1.0 + k)),
            }
        })
        .fold((vec![], vec![], vec![], vec![]), |mut acc, (a, b, c, d)| {
            acc.0.push(a);
            acc.1.push(b);
            acc.2.push(c);
            acc.3.push(d);
            acc
        });

    let dates: Vec<NaiveDate> = (0..cfg.days)
        .map(|k| cfg.start + chrono::Days::new(k as u64))
        .collect();
    let mut level = start_price.clone();
    let mut prices = DMatrix::from_element(cfg.days, n, f64::NAN);
    let mut caps = DMatrix::zeros(cfg.days, n);
    let mut regimes = Vec::with_capacity(cfg.days);
    let mut state = 0u8;
    for (t, &date) in dates.iter().enumerate() {
        if t > 0 {
            if rng.random::<f64>() > cfg.persistence {
                state = 1 - state;
            }
            let regime = REGIMES[state as usize];
            let market: f64 = rng.sample(StandardNormal);
            let weekend = is_weekend(date);
            for i in 0..n {
                let idio: f64 = rng.sample(StandardNormal);
                if weekend && classes[i] == AssetClass::Stock {
                    continue;
                }
                let shock = regime.correlation.sqrt() * market + (1.0 - regime.correlation).sqrt() * idio;
                let sigma = vol[i] * regime.vol_scale;
                level[i] *= (drift[i] - 0.5 * sigma * sigma + sigma * shock).exp();
            }
        }
        regimes.push(state);
        for i in 0..n {
            if !(is_weekend(date) && classes[i] == AssetClass::Stock) || t == 0 {
                prices[(t, i)] = level[i];
            }
            caps[(t, i)] = level[i] * supply[i];
        }
    }
    SynthDataset {
        dates,
        assets,
        classes,
        prices,
        caps,
        regimes,
    }
}

fn write_wide<W: Write>(out: W, dates: &[NaiveDate], assets: &[String], m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = std::iter::once("date").chain(assets.iter().map(String::as_str)).collect();
    w.write_record(&header)?;
    for (t, d) in dates.iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend((0..assets.len()).map(|i| {
            let v = m[(t, i)];
            if v.is_nan() {
                String::new()
            } else {
                v.to_string()
            }
        }));
        w.write_record(&row)?;
    }
    w.flush()
}

impl SynthDataset {
    pub fn write_prices_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_wide(out, &self.dates, &self.assets, &self.prices)
    }

    pub fn write_caps_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_wide(out, &self.dates, &self.assets, &self.caps)
    }

    pub fn write_classes_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ticker", "class"])?;
        for (a, c) in self.assets.iter().zip(&self.classes) {
            w.write_record([a.as_str(), &c.to_string()])?;
        }
        w.flush()
    }

    /// Writes `prices.csv`, `caps.csv` and `classes.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<SynthFiles> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            prices: dir.join("prices.csv"),
            caps: dir.join("caps.csv"),
            classes: dir.join("classes.csv"),
        };
        self.write_prices_csv(std::fs::File::create(&files.prices)?)?;
        self.write_caps_csv(std::fs::File::create(&files.caps)?)?;
        self.write_classes_csv(std::fs::File::create(&files.classes)?)?;
        Ok(files)
    }

    pub fn class_map(&self) -> ClassMap {
        self.assets.iter().cloned().zip(self.classes.iter().copied()).collect()
    }

    pub fn price_panel(&self) -> Result<PricePanel, DataError> {
        PricePanel::new(self.dates.clone(), self.assets.clone(), self.classes.clone(), self.prices.clone())
    }

    pub fn cap_panel(&self) -> Result<CapPanel, DataError> {
        CapPanel::new(self.dates.clone(), self.assets.clone(), self.caps.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{LoadOptions, PricePanel};

    #[test]
    fn shape_and_labels() {
        let d = generate(&SynthConfig::default());
        assert_eq!(d.dates.len(), 600);
        assert_eq!(d.assets.len(), 6);
        let stocks = d.classes.iter().filter(|c| **c == AssetClass::Stock).count();
        assert_eq!(stocks, 3);
        assert!(d.caps.iter().all(|c| c.is_finite() && *c > 0.0));
    }

    #[test]
    fn stocks_are_missing_on_weekends_only() {
        let d = generate(&SynthConfig::default());
        for (t, date) in d.dates.iter().enumerate().skip(1) {
            for i in 0..d.assets.len() {
                let missing = d.prices[(t, i)].is_nan();
                assert_eq!(missing, d.classes[i] == AssetClass::Stock && is_weekend(*date));
            }
        }
    }

    #[test]
    fn regimes_persist() {
        let d = generate(&SynthConfig::default());
        let switches = d.regimes.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(switches > 0);
        assert!(switches < 30);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default();
        let bytes = |d: &SynthDataset| {
            let mut buf = Vec::new();
            d.write_prices_csv(&mut buf).unwrap();
            d.write_caps_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(&generate(&cfg)), bytes(&generate(&cfg)));
        let other = generate(&SynthConfig { seed: 7, ..cfg });
        assert_ne!(other.prices[(5, 3)], generate(&SynthConfig::default()).prices[(5, 3)]);
    }

    #[test]
    fn csv_round_trip_fills_weekends() {
        let d = generate(&SynthConfig { days: 30, ..Default::default() });
        let mut buf = Vec::new();
        d.write_prices_csv(&mut buf).unwrap();
        let panel = PricePanel::from_reader(buf.as_slice(), &d.class_map(), &LoadOptions::default()).unwrap();
        let direct = d.price_panel().unwrap();
        assert_eq!(panel.raw_prices(), direct.raw_prices());
        assert!(panel.raw_prices().iter().all(|p| p.is_finite()));
    }
}
