//! Price and market-capitalization panels.
//!
//! Panels are read from wide CSV files (`date,<ticker>,...`, one row per
//! date, empty cell = missing). After loading, the calendar is made
//! contiguous (every calendar day present) and each asset is filled forward
//! with its last available quote between its first and last quoted date.
//! Cells before the first quote (or after the last) stay missing, which is
//! how per-asset availability is represented.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Tickers dropped on load. Stablecoins carry no variance information and
/// would dominate any minimum-variance portfolio.
pub const DEFAULT_STABLECOINS: &[&str] = &[
    "USDT", "USDC", "BUSD", "DAI", "UST", "USTC", "TUSD", "USDP", "PAX", "GUSD", "HUSD", "USDN",
    "FRAX", "LUSD", "USDD", "FDUSD", "PYUSD", "EURS", "SUSD",
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("invalid date {0:?}")]
    BadDate(String),
    #[error("duplicate date row {0}")]
    DuplicateDate(NaiveDate),
    #[error("invalid value {value} for {asset} on {date}")]
    InvalidValue {
        asset: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("unknown asset class {0:?} (expected stock or crypto)")]
    UnknownClass(String),
    #[error("no asset class given for ticker {0}")]
    MissingClass(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("asset {asset} is not fully available between {start} and {end}")]
    Unavailable {
        asset: String,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("date {0} is not in the panel")]
    DateNotFound(NaiveDate),
    #[error("insufficient {class} assets on {date}: need {needed}, have {available}")]
    InsufficientAssets {
        class: AssetClass,
        date: NaiveDate,
        needed: usize,
        available: usize,
    },
    #[error("panel has no rows")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetClass {
    Stock,
    Crypto,
}

impl std::fmt::Display for AssetClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AssetClass::Stock => "stock",
            AssetClass::Crypto => "crypto",
        })
    }
}

impl std::str::FromStr for AssetClass {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stock" => Ok(AssetClass::Stock),
            "crypto" => Ok(AssetClass::Crypto),
            other => Err(DataError::UnknownClass(other.to_string())),
        }
    }
}

/// Ticker → asset class lookup, loaded from a `ticker,class` CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMap {
    classes: BTreeMap<String, AssetClass>,
}

impl ClassMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ticker: impl Into<String>, class: AssetClass) {
        self.classes.insert(ticker.into(), class);
    }

    pub fn get(&self, ticker: &str) -> Option<AssetClass> {
        self.classes.get(ticker).copied()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, AssetClass)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut map = ClassMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
            if record.len() != 2 {
                return Err(DataError::Csv(format!(
                    "class map rows need 2 fields, got {}",
                    record.len()
                )));
            }
            map.insert(record[0].to_string(), record[1].parse()?);
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_reader(open(path.as_ref())?)
    }
}

impl FromIterator<(String, AssetClass)> for ClassMap {
    fn from_iter<I: IntoIterator<Item = (String, AssetClass)>>(iter: I) -> Self {
        ClassMap {
            classes: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Tickers removed before any processing.
    pub blocklist: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            blocklist: DEFAULT_STABLECOINS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Date-indexed close prices on a contiguous daily calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    classes: Vec<AssetClass>,
    /// T×N, NaN where the asset is not yet (or no longer) quoted.
    prices: DMatrix<f64>,
}

impl PricePanel {
    /// Builds a panel from already-contiguous data; missing cells are NaN.
    /// Fill-forward is applied.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        classes: Vec<AssetClass>,
        mut prices: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::Empty);
        }
        if prices.nrows() != dates.len()
            || prices.ncols() != assets.len()
            || classes.len() != assets.len()
        {
            return Err(DataError::Csv("panel dimensions do not match".into()));
        }
        for w in dates.windows(2) {
            if w[1] - w[0] != Duration::days(1) {
                return Err(DataError::Csv(format!(
                    "dates must be consecutive days, found {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (t, date) in dates.iter().enumerate() {
            for (i, asset) in assets.iter().enumerate() {
                let v = prices[(t, i)];
                if !v.is_nan() && (v <= 0.0 || !v.is_finite()) {
                    return Err(DataError::InvalidValue {
                        asset: asset.clone(),
                        date: *date,
                        value: v,
                    });
                }
            }
        }
        fill_forward(&mut prices);
        Ok(Self {
            dates,
            assets,
            classes,
            prices,
        })
    }

    pub fn from_reader<R: Read>(
        reader: R,
        classes: &ClassMap,
        opts: &LoadOptions,
    ) -> Result<Self, DataError> {
        let table = WideTable::parse(reader, opts)?;
        let asset_classes = table
            .assets
            .iter()
            .map(|a| classes.get(a).ok_or_else(|| DataError::MissingClass(a.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let (dates, (values, assets)) = table.into_calendar(true)?;
        Self::new(dates, assets, asset_classes, values)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn classes(&self) -> &[AssetClass] {
        &self.classes
    }

    pub fn class_map(&self) -> ClassMap {
        self.assets
            .iter()
            .cloned()
            .zip(self.classes.iter().copied())
            .collect()
    }

    pub fn asset_index(&self, ticker: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == ticker)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - *self.dates.first()?).num_days();
        (offset >= 0 && (offset as usize) < self.dates.len()).then_some(offset as usize)
    }

    pub fn price(&self, t: usize, asset: usize) -> Option<f64> {
        let v = self.prices[(t, asset)];
        (!v.is_nan()).then_some(v)
    }

    /// Last quoted price at or before `t`; used to mark positions in assets
    /// that stopped trading.
    pub fn last_price(&self, t: usize, asset: usize) -> Option<f64> {
        (0..=t).rev().find_map(|s| self.price(s, asset))
    }

    pub fn raw_prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    /// First and last row index with a quote.
    pub fn availability(&self, asset: usize) -> Option<(usize, usize)> {
        let col = self.prices.column(asset);
        let first = col.iter().position(|v| !v.is_nan())?;
        let last = col.iter().rposition(|v| !v.is_nan())?;
        Some((first, last))
    }

    /// True when the asset has a price on every row of `start..=end`.
    pub fn is_available(&self, asset: usize, start: usize, end: usize) -> bool {
        matches!(self.availability(asset), Some((f, l)) if f <= start && end <= l)
    }

    /// Simple returns for the named assets over `[start, end]` (inclusive price dates).
    pub fn compute_returns(
        &self,
        assets: &[&str],
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<ReturnsMatrix, DataError> {
        let idx = assets
            .iter()
            .map(|a| self.asset_index(a).ok_or_else(|| DataError::UnknownAsset(a.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let s = self.date_index(start).ok_or(DataError::DateNotFound(start))?;
        let e = self.date_index(end).ok_or(DataError::DateNotFound(end))?;
        self.returns_between(&idx, s, e)
    }

    /// Index-based variant of [`PricePanel::compute_returns`].
    pub fn returns_between(
        &self,
        assets: &[usize],
        start: usize,
        end: usize,
    ) -> Result<ReturnsMatrix, DataError> {
        if end <= start || end >= self.len() {
            return Err(DataError::Csv(format!(
                "return range needs at least two dates inside the panel, got rows {start}..={end}"
            )));
        }
        for &a in assets {
            if !self.is_available(a, start, end) {
                return Err(DataError::Unavailable {
                    asset: self.assets[a].clone(),
                    start: self.dates[start],
                    end: self.dates[end],
                });
            }
        }
        let values = DMatrix::from_fn(end - start, assets.len(), |t, j| {
            let a = assets[j];
            self.prices[(start + t + 1, a)] / self.prices[(start + t, a)] - 1.0
        });
        Ok(ReturnsMatrix {
            dates: self.dates[start + 1..=end].to_vec(),
            assets: assets.iter().map(|&a| self.assets[a].clone()).collect(),
            values,
        })
    }
}

pub fn load_price_panel(path: impl AsRef<Path>, classes: &ClassMap) -> Result<PricePanel, DataError> {
    load_price_panel_with(path, classes, &LoadOptions::default())
}

pub fn load_price_panel_with(
    path: impl AsRef<Path>,
    classes: &ClassMap,
    opts: &LoadOptions,
) -> Result<PricePanel, DataError> {
    PricePanel::from_reader(open(path.as_ref())?, classes, opts)
}

/// Fills each column forward from its first to its last non-missing cell.
/// Cells outside that range are left as NaN. Idempotent.
pub fn fill_forward(values: &mut DMatrix<f64>) {
    for mut col in values.column_iter_mut() {
        let Some(first) = col.iter().position(|v| !v.is_nan()) else {
            continue;
        };
        let last = col.iter().rposition(|v| !v.is_nan()).unwrap_or(first);
        let mut prev = col[first];
        for t in first..=last {
            if col[t].is_nan() {
                col[t] = prev;
            } else {
                prev = col[t];
            }
        }
    }
}

/// Simple returns `r_t = P_t / P_{t-1} - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    /// Date of the closing price each return ends on.
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// (T-1)×N
    pub values: DMatrix<f64>,
}

impl ReturnsMatrix {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, values: DMatrix<f64>) -> Self {
        debug_assert_eq!(dates.len(), values.nrows());
        debug_assert_eq!(assets.len(), values.ncols());
        Self {
            dates,
            assets,
            values,
        }
    }

    /// Returns without dates, named `A0, A1, ...`. Handy for estimator inputs.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = (0..values.nrows())
            .map(|t| start + Duration::days(t as i64))
            .collect();
        let assets = (0..values.ncols()).map(|i| format!("A{i}")).collect();
        Self::new(dates, assets, values)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> ReturnsMatrix {
        ReturnsMatrix {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }

    /// The trailing `k` rows.
    pub fn tail(&self, k: usize) -> ReturnsMatrix {
        let n = self.len();
        self.slice_rows(n - k.min(n), n)
    }
}

/// Market capitalizations on the same calendar as a [`PricePanel`].
#[derive(Debug, Clone, PartialEq)]
pub struct CapPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    caps: DMatrix<f64>,
}

impl CapPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, caps: DMatrix<f64>) -> Result<Self, DataError> {
        if caps.nrows() != dates.len() || caps.ncols() != assets.len() {
            return Err(DataError::Csv("cap panel dimensions do not match".into()));
        }
        for (t, date) in dates.iter().enumerate() {
            for (i, asset) in assets.iter().enumerate() {
                let v = caps[(t, i)];
                if !v.is_nan() && (v < 0.0 || !v.is_finite()) {
                    return Err(DataError::InvalidValue {
                        asset: asset.clone(),
                        date: *date,
                        value: v,
                    });
                }
            }
        }
        Ok(Self { dates, assets, caps })
    }

    pub fn from_reader<R: Read>(reader: R, opts: &LoadOptions) -> Result<Self, DataError> {
        let table = WideTable::parse(reader, opts)?;
        let (dates, (mut values, assets)) = table.into_calendar(false)?;
        fill_forward(&mut values);
        Self::new(dates, assets, values)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn cap(&self, t: usize, asset: usize) -> Option<f64> {
        let v = self.caps[(t, asset)];
        (!v.is_nan()).then_some(v)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.iter().position(|d| *d == date)
    }

    /// Reindexes onto the price panel's calendar and asset order. Caps for
    /// assets or dates absent from this panel become missing.
    pub fn aligned_to(&self, prices: &PricePanel) -> CapPanel {
        let date_pos: HashMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let asset_pos: HashMap<&str, usize> = self
            .assets
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i))
            .collect();
        let caps = DMatrix::from_fn(prices.len(), prices.n_assets(), |t, i| {
            match (
                date_pos.get(&prices.dates()[t]),
                asset_pos.get(prices.assets()[i].as_str()),
            ) {
                (Some(&s), Some(&j)) => self.caps[(s, j)],
                _ => f64::NAN,
            }
        });
        CapPanel {
            dates: prices.dates().to_vec(),
            assets: prices.assets().to_vec(),
            caps,
        }
    }
}

pub fn load_cap_panel(path: impl AsRef<Path>) -> Result<CapPanel, DataError> {
    CapPanel::from_reader(open(path.as_ref())?, &LoadOptions::default())
}

/// Top-cap stocks followed by top-cap cryptos on `date`, each group sorted by
/// descending cap with ties broken by ticker.
pub fn select_universe(
    caps: &CapPanel,
    classes: &ClassMap,
    date: NaiveDate,
    n_stock: usize,
    n_crypto: usize,
) -> Result<Vec<String>, DataError> {
    select_universe_where(caps, classes, date, n_stock, n_crypto, |_| true)
}

/// [`select_universe`] restricted to tickers accepted by `eligible`.
pub fn select_universe_where(
    caps: &CapPanel,
    classes: &ClassMap,
    date: NaiveDate,
    n_stock: usize,
    n_crypto: usize,
    eligible: impl Fn(&str) -> bool,
) -> Result<Vec<String>, DataError> {
    let t = caps.date_index(date).ok_or(DataError::DateNotFound(date))?;
    let ranked = |class: AssetClass| {
        let mut v: Vec<(&str, f64)> = caps
            .assets
            .iter()
            .enumerate()
            .filter(|(_, a)| classes.get(a) == Some(class) && eligible(a))
            .filter_map(|(i, a)| caps.cap(t, i).map(|c| (a.as_str(), c)))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    };
    let mut out = Vec::with_capacity(n_stock + n_crypto);
    for (class, n) in [(AssetClass::Stock, n_stock), (AssetClass::Crypto, n_crypto)] {
        if n == 0 {
            continue;
        }
        let ranked = ranked(class);
        if ranked.len() < n {
            return Err(DataError::InsufficientAssets {
                class,
                date,
                needed: n,
                available: ranked.len(),
            });
        }
        out.extend(ranked.into_iter().take(n).map(|(a, _)| a.to_string()));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parsed wide CSV before calendar alignment.
struct WideTable {
    assets: Vec<String>,
    rows: BTreeMap<NaiveDate, Vec<Option<f64>>>,
}

impl WideTable {
    fn parse<R: Read>(reader: R, opts: &LoadOptions) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
        if headers.is_empty() || !headers[0].eq_ignore_ascii_case("date") {
            return Err(DataError::Csv("first column must be `date`".into()));
        }
        let keep: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, h)| !opts.blocklist.iter().any(|b| b.eq_ignore_ascii_case(h)))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let mut rows = BTreeMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|_| DataError::BadDate(record[0].to_string()))?;
            let mut row = Vec::with_capacity(keep.len());
            for (col, asset) in &keep {
                let cell = record.get(*col).unwrap_or("");
                if cell.is_empty() {
                    row.push(None);
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| DataError::Csv(format!("bad number {cell:?} for {asset} on {date}")))?;
                row.push(Some(v));
            }
            if rows.insert(date, row).is_some() {
                return Err(DataError::DuplicateDate(date));
            }
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self {
            assets: keep.into_iter().map(|(_, a)| a).collect(),
            rows,
        })
    }

    /// Expands to a contiguous daily calendar; returns dates and (T×N values, assets).
    #[allow(clippy::type_complexity)]
    fn into_calendar(
        &self,
        strictly_positive: bool,
    ) -> Result<(Vec<NaiveDate>, (DMatrix<f64>, Vec<String>)), DataError> {
        let first = *self.rows.keys().next().ok_or(DataError::Empty)?;
        let last = *self.rows.keys().next_back().ok_or(DataError::Empty)?;
        let n_days = (last - first).num_days() as usize + 1;
        let dates: Vec<NaiveDate> = (0..n_days).map(|d| first + Duration::days(d as i64)).collect();
        let mut values = DMatrix::from_element(n_days, self.assets.len(), f64::NAN);
        for (date, row) in &self.rows {
            let t = (*date - first).num_days() as usize;
            for (i, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    let bad = if strictly_positive { v <= 0.0 } else { v < 0.0 };
                    if bad || !v.is_finite() {
                        return Err(DataError::InvalidValue {
                            asset: self.assets[i].clone(),
                            date: *date,
                            value: v,
                        });
                    }
                    values[(t, i)] = v;
                }
            }
        }
        Ok((dates, (values, self.assets.clone())))
    }
}
