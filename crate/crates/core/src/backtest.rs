//! Rebalancing backtest.
//!
//! On each rebalance date the engine selects the universe by market cap among
//! assets with a complete lookback window, sells positions that left the
//! universe, estimates or forecasts the covariance matrix, solves for
//! minimum-variance weights with a turnover penalty and buys whole shares with
//! the greedy allocator. Between rebalances the portfolio is marked to market
//! once per calendar day. Every trade pays `commission × |notional|`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::allocator::{greedy_allocate_with_commission, AllocationError};
use crate::cholpipe::{build_factor_series, reconstruct, CholError};
use crate::estimators::{estimate, CovMatrix, EstimatorError, EstimatorSpec};
use crate::forecasters::{derive_seed, ForecastError, ForecasterSpec};
use crate::market_data::{AssetClass, CapPanel, ClassMap, DataError, PricePanel};
use crate::metrics::{compute_metrics, MetricsBlock, MetricsError};
use crate::optimizer::{mean_historical_returns, min_variance, OptimizerError};

#[derive(Debug, thiserror::Error)]
pub enum BacktestError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Cholesky(#[from] CholError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("insufficient history: need {need} days before the first rebalance, panel has {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("no eligible assets on {0}")]
    EmptyUniverse(NaiveDate),
    #[error("invalid strategy: {0}")]
    InvalidSpec(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Covariance source: a classical estimator or a forecaster of the
/// Cholesky factor series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Estimator(EstimatorSpec),
    Forecaster(ForecasterSpec),
}

impl ModelSpec {
    /// Lower-case model family used to group results.
    pub fn family(&self) -> String {
        match self {
            ModelSpec::Estimator(e) => e.kind.name().to_ascii_lowercase(),
            ModelSpec::Forecaster(f) => f.family().to_string(),
        }
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = BacktestError;

    /// An estimator kind or forecaster family name with default settings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let forecaster = match s.trim().to_ascii_lowercase().as_str() {
            "persistence" => Some(ForecasterSpec::Persistence),
            "lstm" => Some(ForecasterSpec::Lstm { train: Default::default() }),
            "deepvar" => Some(ForecasterSpec::DeepVar { train: Default::default(), prob: Default::default() }),
            "gpvar" => Some(ForecasterSpec::GpVar { train: Default::default(), prob: Default::default() }),
            _ => None,
        };
        if let Some(f) = forecaster {
            return Ok(ModelSpec::Forecaster(f));
        }
        let kind = s
            .trim()
            .parse()
            .map_err(|_| BacktestError::InvalidSpec(format!("unknown model {s:?}")))?;
        Ok(ModelSpec::Estimator(EstimatorSpec { kind, ..Default::default() }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    /// Returns per covariance estimate.
    pub window: usize,
    /// Calendar days between rebalances.
    pub rebalance: usize,
    pub model: ModelSpec,
    #[serde(default = "default_capital")]
    pub initial_capital: f64,
    #[serde(default = "default_commission")]
    pub commission: f64,
    #[serde(default = "default_universe_size")]
    pub n_stock: usize,
    #[serde(default = "default_universe_size")]
    pub n_crypto: usize,
    #[serde(default)]
    pub seed: u64,
    /// First rebalance date; the earliest feasible date when absent.
    #[serde(default)]
    pub start: Option<NaiveDate>,
    /// Last marked date; the end of the panel when absent.
    #[serde(default)]
    pub end: Option<NaiveDate>,
}

fn default_capital() -> f64 {
    100_000.0
}

fn default_commission() -> f64 {
    0.005
}

fn default_universe_size() -> usize {
    10
}

impl StrategySpec {
    pub fn new(window: usize, rebalance: usize, model: ModelSpec) -> Self {
        Self {
            window,
            rebalance,
            model,
            initial_capital: default_capital(),
            commission: default_commission(),
            n_stock: default_universe_size(),
            n_crypto: default_universe_size(),
            seed: 0,
            start: None,
            end: None,
        }
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidSpec(m));
        if self.window < 2 {
            return bad(format!("window must be at least 2, got {}", self.window));
        }
        if self.rebalance == 0 {
            return bad("rebalance period must be at least 1".into());
        }
        if !(self.initial_capital.is_finite() && self.initial_capital > 0.0) {
            return bad("initial capital must be positive".into());
        }
        if !(self.commission.is_finite() && (0.0..1.0).contains(&self.commission)) {
            return bad("commission must lie in [0, 1)".into());
        }
        if self.n_stock + self.n_crypto == 0 {
            return bad("universe must contain at least one asset".into());
        }
        match &self.model {
            ModelSpec::Estimator(e) => self.estimator().validate().map_err(|err| {
                BacktestError::InvalidSpec(format!("estimator {}: {err}", e.kind))
            })?,
            ModelSpec::Forecaster(f) => {
                if let Some(t) = f.train_config() {
                    t.validate()?;
                }
            }
        }
        Ok(())
    }

    /// The estimator spec with the strategy window applied.
    fn estimator(&self) -> EstimatorSpec {
        match &self.model {
            ModelSpec::Estimator(e) => EstimatorSpec {
                window: self.window,
                ..e.clone()
            },
            ModelSpec::Forecaster(_) => EstimatorSpec::default(),
        }
    }

    /// The forecaster spec with validation length `2 × window`.
    fn forecaster(&self) -> Option<ForecasterSpec> {
        match &self.model {
            ModelSpec::Forecaster(f) => {
                let mut f = f.clone();
                if let Some(t) = f.train_config_mut() {
                    t.validation_len = 2 * self.window;
                }
                Some(f)
            }
            ModelSpec::Estimator(_) => None,
        }
    }

    /// Returns required before a rebalance date. The common `4·window + 20`
    /// floor gives every model family the same first rebalance date.
    pub fn lookback(&self) -> usize {
        let floor = 4 * self.window + 20;
        let model = match &self.model {
            ModelSpec::Estimator(_) => self.estimator().required_history(),
            ModelSpec::Forecaster(_) => {
                let f = self.forecaster().expect("forecaster");
                // Factor rows = returns − window + 1.
                f.min_rows() + self.window - 1
            }
        };
        floor.max(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub asset: String,
    /// Positive for purchases.
    pub delta_shares: i64,
    pub price: f64,
    pub commission: f64,
}

impl Trade {
    /// A trade charged `commission_rate × notional`.
    pub fn new(date: NaiveDate, asset: String, delta_shares: i64, price: f64, commission_rate: f64) -> Self {
        let notional = delta_shares.unsigned_abs() as f64 * price;
        Self {
            date,
            asset,
            delta_shares,
            price,
            commission: commission_rate * notional,
        }
    }

    pub fn notional(&self) -> f64 {
        self.delta_shares.unsigned_abs() as f64 * self.price
    }

    /// Cash change caused by the trade, commission included.
    pub fn cash_flow(&self) -> f64 {
        -(self.delta_shares as f64) * self.price - self.commission
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub date: NaiveDate,
    pub value: f64,
    pub cash: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    pub date: NaiveDate,
    pub universe: Vec<String>,
    pub weights: Vec<f64>,
    /// Final validation loss of the model trained for this date.
    pub val_loss: Option<f64>,
}

/// Holdings and cash, indexed like the price panel's assets.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub assets: Vec<String>,
    pub shares: Vec<u64>,
    pub cash: f64,
}

impl PortfolioState {
    pub fn new(assets: Vec<String>, cash: f64) -> Self {
        Self {
            shares: vec![0; assets.len()],
            assets,
            cash,
        }
    }

    /// `Σ sharesᵢ·priceᵢ(t) + cash`, summed in asset order.
    pub fn value(&self, panel: &PricePanel, t: usize) -> f64 {
        let mut holdings = 0.0;
        for (i, &s) in self.shares.iter().enumerate() {
            if s > 0 {
                holdings += s as f64 * mark_price(panel, t, i);
            }
        }
        holdings + self.cash
    }

    fn apply(&mut self, trade: &Trade, asset: usize) {
        self.shares[asset] = (self.shares[asset] as i64 + trade.delta_shares) as u64;
        self.cash += trade.cash_flow();
    }
}

/// Quoted price, falling back to the last quote for assets no longer listed.
fn mark_price(panel: &PricePanel, t: usize, asset: usize) -> f64 {
    panel.last_price(t, asset).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub spec: StrategySpec,
    pub equity: Vec<EquityPoint>,
    pub trades: Vec<Trade>,
    pub rebalances: Vec<RebalanceRecord>,
    pub metrics: MetricsBlock,
    pub final_state: PortfolioState,
}

impl BacktestReport {
    pub fn total_commission(&self) -> f64 {
        self.trades.iter().map(|t| t.commission).sum()
    }

    /// Final equity obtained by replaying the trade log from the initial
    /// capital and marking at the last date.
    pub fn replay_final_value(&self, panel: &PricePanel) -> f64 {
        let mut state = PortfolioState::new(panel.assets().to_vec(), self.spec.initial_capital);
        for trade in &self.trades {
            let i = panel.asset_index(&trade.asset).expect("traded asset in panel");
            state.apply(trade, i);
        }
        let last = self.equity.last().expect("non-empty equity");
        state.value(panel, panel.date_index(last.date).expect("date in panel"))
    }

    pub fn write_equity_csv<W: Write>(&self, out: W) -> Result<(), BacktestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "value"]).map_err(csv_io)?;
        for p in &self.equity {
            w.write_record([p.date.to_string(), p.value.to_string()]).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trades_csv<W: Write>(&self, out: W) -> Result<(), BacktestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "asset", "delta_shares", "price", "commission"])
            .map_err(csv_io)?;
        for t in &self.trades {
            w.write_record([
                t.date.to_string(),
                t.asset.clone(),
                t.delta_shares.to_string(),
                t.price.to_string(),
                t.commission.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<(), BacktestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(METRICS_HEADER).map_err(csv_io)?;
        w.write_record(metrics_row(&self.metrics, &self.spec.model)).map_err(csv_io)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_rebalances_csv<W: Write>(&self, out: W) -> Result<(), BacktestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "asset", "weight", "val_loss"]).map_err(csv_io)?;
        for r in &self.rebalances {
            let loss = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            for (a, wt) in r.universe.iter().zip(&r.weights) {
                w.write_record([r.date.to_string(), a.clone(), wt.to_string(), loss.clone()])
                    .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub const METRICS_HEADER: [&str; 13] = [
    "aRC", "aSD", "MD", "MLD", "IR", "IR2", "IR3", "Batch Size", "Length", "Cells", "Scaling", "Copula", "Low Rank",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metric values followed by the neural hyperparameter columns (empty when
/// not applicable).
pub fn metrics_row(m: &MetricsBlock, model: &ModelSpec) -> Vec<String> {
    let mut row = vec![
        m.arc.to_string(),
        m.asd.to_string(),
        m.mdd.to_string(),
        m.mld.to_string(),
        fmt_opt(m.ir),
        fmt_opt(m.ir2),
        fmt_opt(m.ir3),
    ];
    row.extend(model_columns(model));
    row
}

/// `Batch Size, Length, Cells, Scaling, Copula, Low Rank`.
pub fn model_columns(model: &ModelSpec) -> [String; 6] {
    let mut cols: [String; 6] = Default::default();
    if let ModelSpec::Forecaster(f) = model {
        if let Some(t) = f.train_config() {
            cols[0] = t.batch_size.to_string();
            cols[1] = t.seq_len.to_string();
            cols[2] = t.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
        }
        if let Some(p) = f.prob_config() {
            cols[2] = format!("{0}-{0}", p.hidden);
            cols[3] = p.scaling.to_string();
            cols[4] = p.copula.to_string();
            cols[5] = p.low_rank.to_string();
        }
    }
    cols
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

struct Engine<'a> {
    panel: &'a PricePanel,
    caps: CapPanel,
    classes: ClassMap,
    spec: &'a StrategySpec,
    lookback: usize,
}

impl Engine<'_> {
    /// Assets classified, capped and quoted on every day of the lookback.
    fn eligible(&self, t: usize) -> Vec<bool> {
        (0..self.panel.n_assets())
            .map(|i| {
                t >= self.lookback
                    && self.panel.is_available(i, t - self.lookback, t)
                    && self.caps.cap(t, i).is_some()
                    && self.classes.get(&self.panel.assets()[i]).is_some()
            })
            .collect()
    }

    fn universe(&self, t: usize) -> Result<Vec<usize>, BacktestError> {
        let eligible = self.eligible(t);
        let count = |class: AssetClass| {
            (0..eligible.len())
                .filter(|&i| eligible[i] && self.classes.get(&self.panel.assets()[i]) == Some(class))
                .count()
        };
        let n_stock = self.spec.n_stock.min(count(AssetClass::Stock));
        let n_crypto = self.spec.n_crypto.min(count(AssetClass::Crypto));
        let date = self.panel.dates()[t];
        if n_stock + n_crypto == 0 {
            return Err(BacktestError::EmptyUniverse(date));
        }
        let names = crate::market_data::select_universe_where(&self.caps, &self.classes, date, n_stock, n_crypto, |a| {
            self.panel.asset_index(a).is_some_and(|i| eligible[i])
        })?;
        Ok(names
            .iter()
            .map(|a| self.panel.asset_index(a).expect("selected from panel"))
            .collect())
    }

    fn covariance(&self, t: usize, universe: &[usize]) -> Result<(CovMatrix, Option<f64>), BacktestError> {
        let date = self.panel.dates()[t];
        match &self.spec.model {
            ModelSpec::Estimator(_) => {
                let history = self.panel.returns_between(universe, t - self.lookback, t)?;
                Ok((estimate(&self.spec.estimator(), &history)?, None))
            }
            ModelSpec::Forecaster(_) => {
                let forecaster = self.spec.forecaster().expect("forecaster");
                // Expanding window: everything since all members are quoted.
                let start = universe
                    .iter()
                    .map(|&i| self.panel.availability(i).map_or(t, |(first, _)| first))
                    .max()
                    .unwrap_or(t);
                let history = self.panel.returns_between(universe, start, t)?;
                let series = build_factor_series(&history, self.spec.window)?;
                let seed = derive_seed(self.spec.seed, &format!("rebalance-{date}"));
                let forecast = forecaster.forecast(&series.rows(), seed)?;
                let cov = reconstruct(&forecast.values, &history.assets)?;
                let loss = forecast.report.and_then(|r| r.final_val_loss());
                Ok((cov, loss))
            }
        }
    }

    fn first_rebalance(&self, end: usize) -> Result<usize, BacktestError> {
        let need = self.lookback + 1;
        if let Some(start) = self.spec.start {
            let t = self.panel.date_index(start).ok_or(DataError::DateNotFound(start))?;
            if t < self.lookback {
                return Err(BacktestError::InsufficientHistory { need, got: t + 1 });
            }
            return Ok(t);
        }
        (self.lookback..=end)
            .find(|&t| self.eligible(t).iter().any(|&e| e))
            .ok_or(BacktestError::InsufficientHistory {
                need,
                got: self.panel.len(),
            })
    }
}

pub fn run_backtest(panel: &PricePanel, caps: &CapPanel, spec: &StrategySpec) -> Result<BacktestReport, BacktestError> {
    spec.validate()?;
    let engine = Engine {
        panel,
        caps: caps.aligned_to(panel),
        classes: panel.class_map(),
        spec,
        lookback: spec.lookback(),
    };
    let end = match spec.end {
        Some(d) => panel.date_index(d).ok_or(DataError::DateNotFound(d))?,
        None => panel.len() - 1,
    };
    let t0 = engine.first_rebalance(end)?;
    if t0 > end {
        return Err(BacktestError::InsufficientHistory {
            need: engine.lookback + 1,
            got: end + 1,
        });
    }

    let mut state = PortfolioState::new(panel.assets().to_vec(), spec.initial_capital);
    let mut trades = Vec::new();
    let mut rebalances = Vec::new();
    let mut equity = Vec::with_capacity(end - t0 + 1);
    let c = spec.commission;

    for t in t0..=end {
        if (t - t0) % spec.rebalance == 0 {
            let date = panel.dates()[t];
            let universe = engine.universe(t)?;
            let mut in_universe = vec![false; panel.n_assets()];
            universe.iter().for_each(|&i| in_universe[i] = true);

            // Positions outside the new universe are sold first.
            for i in 0..panel.n_assets() {
                if state.shares[i] > 0 && !in_universe[i] {
                    let price = mark_price(panel, t, i);
                    let delta = -(state.shares[i] as i64);
                    let trade = Trade::new(date, panel.assets()[i].clone(), delta, price, c);
                    state.apply(&trade, i);
                    trades.push(trade);
                }
            }

            let (cov, val_loss) = engine.covariance(t, &universe)?;
            if log::log_enabled!(log::Level::Debug) {
                let window = panel.returns_between(&universe, t - spec.window, t)?;
                let mu = mean_historical_returns(&window)?;
                log::debug!("{date}: expected returns {:?}", mu.mu);
            }
            let prices: Vec<f64> = universe.iter().map(|&i| mark_price(panel, t, i)).collect();
            let value = state.value(panel, t);
            let held: Vec<f64> = universe
                .iter()
                .zip(&prices)
                .map(|(&i, p)| state.shares[i] as f64 * p / value)
                .collect();
            let has_positions = held.iter().any(|&w| w > 0.0);
            let weights = if has_positions {
                min_variance(&cov, Some(&held), c)?
            } else {
                min_variance(&cov, None, 0.0)?
            };

            let target = allocate_with_turnover(&state, &universe, weights.weights(), &prices, value, c)?;
            // Sells before buys so cash stays non-negative throughout.
            let mut orders: Vec<(usize, i64, f64)> = universe
                .iter()
                .zip(&target)
                .zip(&prices)
                .map(|((&i, &s), &p)| (i, s as i64 - state.shares[i] as i64, p))
                .filter(|(_, d, _)| *d != 0)
                .collect();
            orders.sort_by_key(|&(i, d, _)| (d > 0, i));
            for (i, delta, price) in orders {
                let trade = Trade::new(date, panel.assets()[i].clone(), delta, price, c);
                state.apply(&trade, i);
                trades.push(trade);
            }
            debug_assert!(state.cash >= 0.0);
            rebalances.push(RebalanceRecord {
                date,
                universe: universe.iter().map(|&i| panel.assets()[i].clone()).collect(),
                weights: weights.weights().to_vec(),
                val_loss,
            });
        }
        equity.push(EquityPoint {
            date: panel.dates()[t],
            value: state.value(panel, t),
            cash: state.cash,
        });
    }

    let values: Vec<f64> = equity.iter().map(|p| p.value).collect();
    let dates: Vec<NaiveDate> = equity.iter().map(|p| p.date).collect();
    let metrics = compute_metrics(&values, &dates)?;
    Ok(BacktestReport {
        spec: spec.clone(),
        equity,
        trades,
        rebalances,
        metrics,
        final_state: state,
    })
}

/// Target share counts for `universe`. The allocator reserves commission on
/// the full target position; because the actual commission is charged on the
/// change in holdings, the capital is reduced by any resulting shortfall until
/// the post-trade cash is non-negative.
fn allocate_with_turnover(
    state: &PortfolioState,
    universe: &[usize],
    weights: &[f64],
    prices: &[f64],
    value: f64,
    commission: f64,
) -> Result<Vec<u64>, BacktestError> {
    let mut capital = value;
    for _ in 0..64 {
        let alloc = greedy_allocate_with_commission(weights, prices, capital.max(0.0), commission)?;
        let mut cash = state.cash;
        let mut in_universe_value = 0.0;
        for (k, &i) in universe.iter().enumerate() {
            let old = state.shares[i] as i64;
            let delta = alloc.shares[k] as i64 - old;
            cash += -(delta as f64) * prices[k] - commission * (delta.unsigned_abs() as f64 * prices[k]);
            in_universe_value += old as f64 * prices[k];
        }
        debug_assert!(in_universe_value <= value + 1e-9 * value.abs());
        if cash >= 0.0 {
            return Ok(alloc.shares);
        }
        capital -= -cash + 1e-9 * value.max(1.0);
    }
    // Unreachable in practice: selling everything is always affordable.
    Ok(vec![0; universe.len()])
}

/// Ledger check: per-day value equals holdings at market plus cash, where
/// holdings and cash are rebuilt from the trade log. Returns the largest
/// absolute discrepancy.
pub fn accounting_discrepancy(report: &BacktestReport, panel: &PricePanel) -> f64 {
    let mut state = PortfolioState::new(panel.assets().to_vec(), report.spec.initial_capital);
    let mut next = 0;
    let mut worst: f64 = 0.0;
    for point in &report.equity {
        while next < report.trades.len() && report.trades[next].date <= point.date {
            let trade = &report.trades[next];
            state.apply(trade, panel.asset_index(&trade.asset).expect("asset"));
            next += 1;
        }
        let t = panel.date_index(point.date).expect("date");
        let mut holdings = 0.0;
        for (i, &s) in state.shares.iter().enumerate() {
            holdings += s as f64 * panel.last_price(t, i).unwrap_or(0.0);
        }
        worst = worst.max((point.value - (holdings + state.cash)).abs());
        worst = worst.max((point.cash - state.cash).abs());
    }
    worst
}
