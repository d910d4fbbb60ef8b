//! Parameter sweeps over windows, rebalance periods and covariance models.
//!
//! A [`RunConfig`] is read from TOML:
//!
//! ```toml
//! prices = "data/prices.csv"
//! caps = "data/caps.csv"
//! classes = "data/classes.csv"
//! out = "results"
//! seed = 7
//! jobs = 4
//!
//! [grid]
//! windows = [30, 60]
//! rebalances = [30, 60]
//!
//! [[grid.models]]
//! estimator = { kind = "Sample" }
//!
//! [[grid.models]]
//! forecaster = { family = "lstm", train = { hidden = [5] } }
//! ```
//!
//! Relative paths are resolved against the config file's directory. When no
//! `models`, `lstm` or `prob` section is given the full default sweep is used:
//! every estimator, the LSTM sweep and the DeepVAR/GPVAR sweep.
//!
//! Each cell runs as an independent backtest seeded from the master seed and
//! the run id. Cells run on a pool of `jobs` threads; results are sorted by
//! run id before anything is written, so output does not depend on `jobs`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{model_columns, run_backtest, BacktestError, BacktestReport, ModelSpec, StrategySpec};
use crate::estimators::{EstimatorKind, EstimatorSpec};
use crate::forecasters::{derive_seed, ForecasterSpec, ProbConfig, TrainConfig};
use crate::market_data::{load_cap_panel, CapPanel, ClassMap, DataError, LoadOptions, PricePanel};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{name} file {path} does not exist")]
    MissingFile { name: &'static str, path: PathBuf },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GridError + '_ {
    move |source| GridError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// LSTM hyperparameter sweep; the Cartesian product of the lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmSweep {
    pub hidden: Vec<Vec<usize>>,
    pub batch_size: Vec<usize>,
    pub seq_len: Vec<usize>,
    /// Remaining training settings.
    pub train: TrainConfig,
}

impl Default for LstmSweep {
    fn default() -> Self {
        Self {
            hidden: vec![
                vec![5],
                vec![10],
                vec![15],
                vec![20],
                vec![5, 5],
                vec![5, 10],
                vec![10, 5],
                vec![10, 10],
                vec![15, 15],
                vec![20, 20],
            ],
            batch_size: vec![8, 16],
            seq_len: vec![15, 20],
            train: TrainConfig::default(),
        }
    }
}

impl LstmSweep {
    pub fn expand(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for hidden in &self.hidden {
            for &batch_size in &self.batch_size {
                for &seq_len in &self.seq_len {
                    let train = TrainConfig {
                        hidden: hidden.clone(),
                        batch_size,
                        seq_len,
                        ..self.train.clone()
                    };
                    out.push(ModelSpec::Forecaster(ForecasterSpec::Lstm { train }));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbFamily {
    DeepVar,
    GpVar,
}

/// DeepVAR/GPVAR sweep; the Cartesian product of the lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbSweep {
    pub families: Vec<ProbFamily>,
    pub hidden: Vec<usize>,
    pub scaling: Vec<bool>,
    pub low_rank: Vec<bool>,
    pub copula: Vec<bool>,
    pub train: TrainConfig,
    pub prob: ProbConfig,
}

impl Default for ProbSweep {
    fn default() -> Self {
        Self {
            families: vec![ProbFamily::DeepVar, ProbFamily::GpVar],
            hidden: vec![5, 10, 15, 20],
            scaling: vec![true, false],
            low_rank: vec![true, false],
            copula: vec![true, false],
            train: TrainConfig::default(),
            prob: ProbConfig::default(),
        }
    }
}

impl ProbSweep {
    pub fn expand(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &hidden in &self.hidden {
                for &scaling in &self.scaling {
                    for &low_rank in &self.low_rank {
                        for &copula in &self.copula {
                            let prob = ProbConfig {
                                hidden,
                                scaling,
                                low_rank,
                                copula,
                                ..self.prob.clone()
                            };
                            let train = self.train.clone();
                            out.push(ModelSpec::Forecaster(match family {
                                ProbFamily::DeepVar => ForecasterSpec::DeepVar { train, prob },
                                ProbFamily::GpVar => ForecasterSpec::GpVar { train, prob },
                            }));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub windows: Vec<usize>,
    pub rebalances: Vec<usize>,
    pub models: Vec<ModelSpec>,
    pub lstm: Option<LstmSweep>,
    pub prob: Option<ProbSweep>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            windows: vec![30, 60, 90, 120],
            rebalances: vec![30, 60, 90, 120],
            models: Vec::new(),
            lstm: None,
            prob: None,
        }
    }
}

impl GridSpec {
    /// Every model in the sweep, in declaration order.
    pub fn model_list(&self) -> Vec<ModelSpec> {
        if self.models.is_empty() && self.lstm.is_none() && self.prob.is_none() {
            let mut all: Vec<ModelSpec> = EstimatorKind::ALL
                .iter()
                .map(|&k| ModelSpec::Estimator(EstimatorSpec::new(k, 0)))
                .collect();
            all.extend(LstmSweep::default().expand());
            all.extend(ProbSweep::default().expand());
            return all;
        }
        let mut all = self.models.clone();
        if let Some(s) = &self.lstm {
            all.extend(s.expand());
        }
        if let Some(s) = &self.prob {
            all.extend(s.expand());
        }
        all
    }
}

/// Strategy settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyDefaults {
    pub initial_capital: f64,
    pub commission: f64,
    pub n_stock: usize,
    pub n_crypto: usize,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Default for StrategyDefaults {
    fn default() -> Self {
        let base = StrategySpec::new(2, 1, ModelSpec::Estimator(EstimatorSpec::default()));
        Self {
            initial_capital: base.initial_capital,
            commission: base.commission,
            n_stock: base.n_stock,
            n_crypto: base.n_crypto,
            start: None,
            end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub prices: PathBuf,
    pub caps: PathBuf,
    pub classes: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Tickers dropped on load; the stablecoin list when absent.
    #[serde(default)]
    pub blocklist: Option<Vec<String>>,
    #[serde(default)]
    pub strategy: StrategyDefaults,
    #[serde(default)]
    pub grid: GridSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_jobs() -> usize {
    1
}

/// One backtest of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub run_id: String,
    pub spec: StrategySpec,
}

impl RunConfig {
    pub fn new(prices: PathBuf, caps: PathBuf, classes: PathBuf) -> Self {
        Self {
            prices,
            caps,
            classes,
            out: default_out(),
            seed: 0,
            jobs: default_jobs(),
            blocklist: None,
            strategy: StrategyDefaults::default(),
            grid: GridSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, GridError> {
        toml::from_str(text).map_err(|e| GridError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.prices, &mut cfg.caps, &mut cfg.classes, &mut cfg.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, GridError> {
        toml::to_string(self).map_err(|e| GridError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::Config(m));
        if self.grid.windows.is_empty() || self.grid.rebalances.is_empty() {
            return bad("grid needs at least one window and one rebalance period".into());
        }
        if self.grid.model_list().is_empty() {
            return bad("grid has no models".into());
        }
        if let Some(w) = self.grid.windows.iter().find(|&&w| w < 2) {
            return bad(format!("window {w} is below 2"));
        }
        if self.grid.rebalances.contains(&0) {
            return bad("rebalance period 0".into());
        }
        for cell in self.cells() {
            cell.spec
                .validate()
                .map_err(|e| GridError::Config(format!("{}: {e}", cell.run_id)))?;
        }
        for (name, p) in [("prices", &self.prices), ("caps", &self.caps), ("classes", &self.classes)] {
            if !p.is_file() {
                return Err(GridError::MissingFile { name, path: p.clone() });
            }
        }
        Ok(())
    }

    /// Grid cells in run-id order.
    pub fn cells(&self) -> Vec<GridCell> {
        let models = self.grid.model_list();
        let mut cells = Vec::new();
        for &window in &self.grid.windows {
            for &rebalance in &self.grid.rebalances {
                for (m, model) in models.iter().enumerate() {
                    let run_id = format!("w{window:03}_r{rebalance:03}_m{m:03}_{}", model.family());
                    let s = &self.strategy;
                    let spec = StrategySpec {
                        window,
                        rebalance,
                        model: model.clone(),
                        initial_capital: s.initial_capital,
                        commission: s.commission,
                        n_stock: s.n_stock,
                        n_crypto: s.n_crypto,
                        seed: derive_seed(self.seed, &run_id),
                        start: s.start,
                        end: s.end,
                    };
                    cells.push(GridCell { run_id, spec });
                }
            }
        }
        cells.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        cells
    }

    pub fn load_data(&self) -> Result<(PricePanel, CapPanel), GridError> {
        let opts = match &self.blocklist {
            Some(list) => LoadOptions {
                blocklist: list.clone(),
            },
            None => LoadOptions::default(),
        };
        let classes = ClassMap::load(&self.classes)?;
        let prices = crate::market_data::load_price_panel_with(&self.prices, &classes, &opts)?;
        let caps = load_cap_panel(&self.caps)?;
        Ok((prices, caps))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub window: usize,
    pub rebalance: usize,
    pub family: String,
    pub status: RunStatus,
    #[serde(rename = "aRC")]
    pub arc: Option<f64>,
    #[serde(rename = "aSD")]
    pub asd: Option<f64>,
    #[serde(rename = "MD")]
    pub mdd: Option<f64>,
    #[serde(rename = "MLD")]
    pub mld: Option<f64>,
    #[serde(rename = "IR")]
    pub ir: Option<f64>,
    #[serde(rename = "IR2")]
    pub ir2: Option<f64>,
    #[serde(rename = "IR3")]
    pub ir3: Option<f64>,
    #[serde(rename = "Batch Size")]
    pub batch_size: String,
    #[serde(rename = "Length")]
    pub length: String,
    #[serde(rename = "Cells")]
    pub cells: String,
    #[serde(rename = "Scaling")]
    pub scaling: String,
    #[serde(rename = "Copula")]
    pub copula: String,
    #[serde(rename = "Low Rank")]
    pub low_rank: String,
    pub seed: u64,
    pub error: String,
}

impl SummaryRow {
    fn new(cell: &GridCell, outcome: &Result<BacktestReport, BacktestError>) -> Self {
        let [batch_size, length, cells, scaling, copula, low_rank] = model_columns(&cell.spec.model);
        let mut row = SummaryRow {
            run_id: cell.run_id.clone(),
            window: cell.spec.window,
            rebalance: cell.spec.rebalance,
            family: cell.spec.model.family(),
            status: RunStatus::Failed,
            arc: None,
            asd: None,
            mdd: None,
            mld: None,
            ir: None,
            ir2: None,
            ir3: None,
            batch_size,
            length,
            cells,
            scaling,
            copula,
            low_rank,
            seed: cell.spec.seed,
            error: String::new(),
        };
        match outcome {
            Ok(r) => {
                let m = r.metrics;
                row.status = RunStatus::Ok;
                row.arc = Some(m.arc);
                row.asd = Some(m.asd);
                row.mdd = Some(m.mdd);
                row.mld = Some(m.mld);
                row.ir = m.ir;
                row.ir2 = m.ir2;
                row.ir3 = m.ir3;
            }
            Err(e) => row.error = e.to_string(),
        }
        row
    }
}

/// Distribution of one metric over the successful runs of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub window: usize,
    pub rebalance: usize,
    pub family: String,
    pub metric: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    #[serde(rename = "25%")]
    pub q25: Option<f64>,
    #[serde(rename = "50%")]
    pub q50: Option<f64>,
    #[serde(rename = "75%")]
    pub q75: Option<f64>,
    pub max: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn describe(values: &[f64]) -> [Option<f64>; 7] {
    if values.is_empty() {
        return [None; 7];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        Some(mean),
        std,
        Some(sorted[0]),
        Some(quantile(&sorted, 0.25)),
        Some(quantile(&sorted, 0.5)),
        Some(quantile(&sorted, 0.75)),
        Some(sorted[sorted.len() - 1]),
    ]
}

/// Per (window, rebalance, family) statistics of aRC and IR. Failed runs and
/// undefined values are excluded; `std` is the sample standard deviation.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, usize, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.window, r.rebalance, r.family.clone())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((window, rebalance, family), members) in groups {
        let ok: Vec<&SummaryRow> = members.into_iter().filter(|r| r.status == RunStatus::Ok).collect();
        let metrics: [(&str, fn(&SummaryRow) -> Option<f64>); 2] = [("aRC", |r| r.arc), ("IR", |r| r.ir)];
        for (metric, get) in metrics {
            let values: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
            let [mean, std, min, q25, q50, q75, max] = describe(&values);
            out.push(AggregateRow {
                window,
                rebalance,
                family: family.clone(),
                metric: metric.to_string(),
                count: values.len(),
                mean,
                std,
                min,
                q25,
                q50,
                q75,
                max,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSide {
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub side: RankSide,
    pub rank: usize,
    #[serde(flatten)]
    pub row: SummaryRow,
}

/// Best and worst `k` successful runs of each (window, rebalance, family)
/// group, ordered by aRC descending, then IR descending, then run id. Ranks
/// count from 1 at the top of each list; the bottom list starts with the
/// worst run.
pub fn rank_strategies(rows: &[SummaryRow], k: usize) -> Vec<RankRow> {
    let mut groups: BTreeMap<(usize, usize, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == RunStatus::Ok) {
        groups.entry((r.window, r.rebalance, r.family.clone())).or_default().push(r);
    }
    let desc = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    };
    let mut out = Vec::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| {
            desc(a.arc, b.arc)
                .then_with(|| desc(a.ir, b.ir))
                .then_with(|| a.run_id.cmp(&b.run_id))
        });
        for (i, r) in members.iter().take(k).enumerate() {
            out.push(RankRow {
                side: RankSide::Top,
                rank: i + 1,
                row: (*r).clone(),
            });
        }
        for (i, r) in members.iter().rev().take(k).enumerate() {
            out.push(RankRow {
                side: RankSide::Bottom,
                rank: i + 1,
                row: (*r).clone(),
            });
        }
    }
    out
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), GridError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, GridError> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<(), GridError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_ranking<W: Write>(rows: &[RankRow], out: W) -> Result<(), GridError> {
    // Flattened structs cannot be serialized by the csv writer.
    let mut w = csv::Writer::from_writer(out);
    let mut inner = csv::Writer::from_writer(Vec::new());
    let mut header_done = false;
    for r in rows {
        inner.serialize(&r.row)?;
        let bytes = std::mem::replace(&mut inner, csv::Writer::from_writer(Vec::new()))
            .into_inner()
            .map_err(|e| GridError::Config(e.to_string()))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
        if !header_done {
            let mut header = vec!["side".to_string(), "rank".to_string()];
            header.extend(rdr.headers()?.iter().map(str::to_string));
            w.write_record(&header)?;
            header_done = true;
        }
        for rec in rdr.records() {
            let rec = rec?;
            let side = match r.side {
                RankSide::Top => "top",
                RankSide::Bottom => "bottom",
            };
            let mut fields = vec![side.to_string(), r.rank.to_string()];
            fields.extend(rec.iter().map(str::to_string));
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub summary: Vec<SummaryRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl GridOutcome {
    pub fn failed(&self) -> usize {
        self.summary.iter().filter(|r| r.status == RunStatus::Failed).count()
    }
}

fn write_file(path: &Path, f: impl FnOnce(std::fs::File) -> Result<(), GridError>) -> Result<(), GridError> {
    f(std::fs::File::create(path).map_err(io_err(path))?)
}

fn write_run(dir: &Path, cell: &GridCell, report: &BacktestReport) -> Result<(), GridError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let wrap = |e: BacktestError| GridError::Config(e.to_string());
    write_file(&dir.join("equity.csv"), |f| report.write_equity_csv(f).map_err(wrap))?;
    write_file(&dir.join("trades.csv"), |f| report.write_trades_csv(f).map_err(wrap))?;
    write_file(&dir.join("metrics.csv"), |f| report.write_metrics_csv(f).map_err(wrap))?;
    write_file(&dir.join("rebalances.csv"), |f| report.write_rebalances_csv(f).map_err(wrap))?;
    let spec = toml::to_string(&cell.spec).map_err(|e| GridError::Config(e.to_string()))?;
    let path = dir.join("spec.toml");
    std::fs::write(&path, spec).map_err(io_err(&path))
}

/// Runs every cell on already-loaded data and writes results under `out`:
/// `summary.csv`, `aggregate.csv` and `runs/<run_id>/` for each successful
/// run.
pub fn run_cells(
    cells: &[GridCell],
    prices: &PricePanel,
    caps: &CapPanel,
    out: &Path,
    jobs: usize,
) -> Result<GridOutcome, GridError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| GridError::Config(e.to_string()))?;
    let results: Vec<(usize, Result<BacktestReport, BacktestError>)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                log::info!("running {}", cell.run_id);
                let r = run_backtest(prices, caps, &cell.spec);
                if let Err(e) = &r {
                    log::warn!("{} failed: {e}", cell.run_id);
                }
                (i, r)
            })
            .collect()
    });
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[a].run_id.cmp(&cells[b].run_id));

    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut summary = Vec::with_capacity(cells.len());
    for i in order {
        let cell = &cells[i];
        let outcome = &results[i].1;
        if let Ok(report) = outcome {
            write_run(&out.join("runs").join(&cell.run_id), cell, report)?;
        }
        summary.push(SummaryRow::new(cell, outcome));
    }
    let aggregate = aggregate(&summary);
    write_file(&out.join("summary.csv"), |f| write_summary(&summary, f))?;
    write_file(&out.join("aggregate.csv"), |f| write_aggregate(&aggregate, f))?;
    Ok(GridOutcome { summary, aggregate })
}

pub fn run_grid(cfg: &RunConfig) -> Result<GridOutcome, GridError> {
    cfg.validate()?;
    let (prices, caps) = cfg.load_data()?;
    run_cells(&cfg.cells(), &prices, &caps, &cfg.out, cfg.jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run_id: &str, family: &str, arc: Option<f64>, ir: Option<f64>, status: RunStatus) -> SummaryRow {
        SummaryRow {
            run_id: run_id.into(),
            window: 30,
            rebalance: 30,
            family: family.into(),
            status,
            arc,
            asd: Some(0.2),
            mdd: Some(0.1),
            mld: Some(0.1),
            ir,
            ir2: None,
            ir3: None,
            batch_size: String::new(),
            length: String::new(),
            cells: String::new(),
            scaling: String::new(),
            copula: String::new(),
            low_rank: String::new(),
            seed: 0,
            error: String::new(),
        }
    }

    #[test]
    fn default_grid_covers_all_families() {
        let models = GridSpec::default().model_list();
        assert_eq!(models.len(), EstimatorKind::ALL.len() + 40 + 64);
        let lstm = models.iter().filter(|m| m.family() == "lstm").count();
        assert_eq!(lstm, 40);
        assert_eq!(models.iter().filter(|m| m.family() == "gpvar").count(), 32);
    }

    #[test]
    fn cells_are_counted_and_seeded_by_run_id() {
        let text = r#"
prices = "p.csv"
caps = "c.csv"
classes = "k.csv"
seed = 5
[grid]
windows = [30, 60]
rebalances = [30, 60]
[[grid.models]]
estimator = { kind = "Sample" }
[[grid.models]]
estimator = { kind = "Ewma" }
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].run_id, "w030_r030_m000_sample");
        assert_eq!(cells[0].spec.seed, derive_seed(5, "w030_r030_m000_sample"));
        let ids: std::collections::BTreeSet<_> = cells.iter().map(|c| &c.run_id).collect();
        assert_eq!(ids.len(), 8);
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = RunConfig::new("nope.csv".into(), "nope.csv".into(), "nope.csv".into());
        cfg.grid.models = vec![ModelSpec::Estimator(EstimatorSpec::default())];
        assert!(matches!(cfg.validate(), Err(GridError::MissingFile { name: "prices", .. })));
        cfg.grid.windows = vec![];
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("prices = 3").is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn aggregate_excludes_failures() {
        let rows = vec![
            row("a", "sample", Some(0.1), Some(1.0), RunStatus::Ok),
            row("b", "sample", Some(0.3), Some(2.0), RunStatus::Ok),
            row("c", "sample", None, None, RunStatus::Failed),
            row("d", "lstm", None, None, RunStatus::Failed),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 4);
        let lstm_arc = &agg[0];
        assert_eq!((lstm_arc.family.as_str(), lstm_arc.count, lstm_arc.mean), ("lstm", 0, None));
        let arc = &agg[2];
        assert_eq!(arc.metric, "aRC");
        assert_eq!(arc.count, 2);
        assert!((arc.mean.unwrap() - 0.2).abs() < 1e-15);
        assert!((arc.std.unwrap() - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ranking_orders_and_breaks_ties() {
        let rows = vec![
            row("r1", "sample", Some(0.1), Some(1.0), RunStatus::Ok),
            row("r2", "sample", Some(0.2), Some(0.5), RunStatus::Ok),
            row("r3", "sample", Some(0.2), Some(0.9), RunStatus::Ok),
            row("r4", "sample", Some(0.2), Some(0.9), RunStatus::Ok),
            row("r5", "sample", None, None, RunStatus::Failed),
        ];
        let ranked = rank_strategies(&rows, 3);
        let top: Vec<&str> = ranked.iter().filter(|r| r.side == RankSide::Top).map(|r| r.row.run_id.as_str()).collect();
        assert_eq!(top, ["r3", "r4", "r2"]);
        let bottom: Vec<&str> = ranked.iter().filter(|r| r.side == RankSide::Bottom).map(|r| r.row.run_id.as_str()).collect();
        assert_eq!(bottom, ["r1", "r2", "r4"]);

        let three = rank_strategies(&rows[..3], 3);
        assert_eq!(three.len(), 6);
    }

    #[test]
    fn summary_round_trips_through_csv() {
        let rows = vec![
            row("a", "sample", Some(0.1), Some(1.0), RunStatus::Ok),
            row("b", "lstm", None, None, RunStatus::Failed),
        ];
        let mut buf = Vec::new();
        write_summary(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("run_id,window,rebalance,family,status,aRC,aSD,MD,MLD,IR,IR2,IR3,Batch Size"));
        let back: Vec<SummaryRow> = csv::Reader::from_reader(buf.as_slice())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, rows);
        let mut ranked = Vec::new();
        write_ranking(&rank_strategies(&rows, 1), &mut ranked).unwrap();
        let text = String::from_utf8(ranked).unwrap();
        assert!(text.starts_with("side,rank,run_id,"));
        assert_eq!(text.lines().count(), 3);
    }
}
