//! `covfolio` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 run failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use covfolio::backtest::{run_backtest, BacktestError, ModelSpec, StrategySpec};
use covfolio::grid::{self, GridError, RunConfig, RunStatus};
use covfolio::synth::{generate, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "covfolio", version, about = "Minimum-variance backtests with estimated or forecast covariance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single strategy.
    Backtest(RunArgs),
    /// Run every cell of a parameter grid.
    Grid(RunArgs),
    /// Best and worst runs per (window, rebalance, family) from a grid summary.
    Rank(RankArgs),
    /// Write the synthetic stock/crypto dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    caps: Option<PathBuf>,
    /// `ticker,class` CSV.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    /// Days between rebalances.
    #[arg(long)]
    rebalance: Option<usize>,
    /// Estimator kind (sample, semicov, ewma, shrinkconstvar, ...) or
    /// forecaster family (persistence, lstm, deepvar, gpvar).
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid cells; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Grid output directory holding `summary.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Runs listed at each end of every group.
    #[arg(long, default_value_t = 3)]
    top: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    days: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Run(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Run(e) => e,
        }
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Config(_) => Failure::Usage(e.into()),
            GridError::MissingFile { .. } | GridError::Data(_) => Failure::Data(e.into()),
            GridError::Io { .. } | GridError::Csv(_) => Failure::Run(e.into()),
        }
    }
}

impl From<BacktestError> for Failure {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::InvalidSpec(_) => Failure::Usage(e.into()),
            BacktestError::Data(_) | BacktestError::InsufficientHistory { .. } | BacktestError::EmptyUniverse(_) => {
                Failure::Data(e.into())
            }
            _ => Failure::Run(e.into()),
        }
    }
}

fn run_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

/// Config file (if any) with flag overrides applied.
fn run_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Data(anyhow::anyhow!("config file {} does not exist", path.display())));
            }
            RunConfig::load(path)?
        }
        None => {
            let need = |p: &Option<PathBuf>, flag: &str| {
                p.clone()
                    .ok_or_else(|| Failure::Usage(anyhow::anyhow!("--{flag} is required without --config")))
            };
            RunConfig::new(
                need(&args.prices, "prices")?,
                need(&args.caps, "caps")?,
                need(&args.classes, "classes")?,
            )
        }
    };
    if let Some(p) = &args.prices {
        cfg.prices = p.clone();
    }
    if let Some(p) = &args.caps {
        cfg.caps = p.clone();
    }
    if let Some(p) = &args.classes {
        cfg.classes = p.clone();
    }
    if let Some(p) = &args.out {
        cfg.out = p.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(w) = args.window {
        cfg.grid.windows = vec![w];
    }
    if let Some(r) = args.rebalance {
        cfg.grid.rebalances = vec![r];
    }
    if let Some(name) = &args.estimator {
        let model: ModelSpec = name.parse()?;
        cfg.grid.models = vec![model];
        cfg.grid.lstm = None;
        cfg.grid.prob = None;
    }
    Ok(cfg)
}

fn backtest(args: &RunArgs) -> Result<(), Failure> {
    let cfg = run_config(args)?;
    let first = |v: &[usize], what: &str| {
        v.first()
            .copied()
            .ok_or_else(|| Failure::Usage(anyhow::anyhow!("no {what} given")))
    };
    let window = first(&cfg.grid.windows, "window")?;
    let rebalance = first(&cfg.grid.rebalances, "rebalance period")?;
    // Without an explicit model the default sweep starts with the sample estimator.
    let model = cfg
        .grid
        .model_list()
        .into_iter()
        .next()
        .ok_or_else(|| Failure::Usage(anyhow::anyhow!("no model given")))?;
    let s = &cfg.strategy;
    let spec = StrategySpec {
        window,
        rebalance,
        model,
        initial_capital: s.initial_capital,
        commission: s.commission,
        n_stock: s.n_stock,
        n_crypto: s.n_crypto,
        seed: cfg.seed,
        start: s.start,
        end: s.end,
    };
    spec.validate()?;
    for (name, p) in [("prices", &cfg.prices), ("caps", &cfg.caps), ("classes", &cfg.classes)] {
        if !p.is_file() {
            return Err(GridError::MissingFile { name, path: p.clone() }.into());
        }
    }
    let (prices, caps) = cfg.load_data()?;
    let report = run_backtest(&prices, &caps, &spec)?;

    let out = &cfg.out;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(run_failure)?;
    let create = |name: &str| {
        let path = out.join(name);
        std::fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(run_failure)
    };
    report.write_equity_csv(create("equity.csv")?)?;
    report.write_trades_csv(create("trades.csv")?)?;
    report.write_metrics_csv(create("metrics.csv")?)?;
    report.write_rebalances_csv(create("rebalances.csv")?)?;
    let mut stdout = std::io::stdout().lock();
    report.write_metrics_csv(&mut stdout)?;
    Ok(())
}

fn grid_cmd(args: &RunArgs) -> Result<(), Failure> {
    let cfg = run_config(args)?;
    let outcome = grid::run_grid(&cfg)?;
    let failed = outcome.failed();
    let total = outcome.summary.len();
    log::info!("{} of {total} runs succeeded; results in {}", total - failed, cfg.out.display());
    if failed == total {
        return Err(Failure::Run(anyhow::anyhow!("all {total} runs failed")));
    }
    if failed > 0 {
        for r in outcome.summary.iter().filter(|r| r.status == RunStatus::Failed) {
            log::warn!("{}: {}", r.run_id, r.error);
        }
    }
    Ok(())
}

fn rank_cmd(args: &RankArgs) -> Result<(), Failure> {
    let path = args.out.join("summary.csv");
    if !path.is_file() {
        return Err(Failure::Data(anyhow::anyhow!("{} does not exist", path.display())));
    }
    let rows = grid::read_summary(&path).map_err(|e| Failure::Data(e.into()))?;
    let ranked = grid::rank_strategies(&rows, args.top);
    let out = args.out.join("ranking.csv");
    let file = std::fs::File::create(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(run_failure)?;
    grid::write_ranking(&ranked, file)?;
    grid::write_ranking(&ranked, std::io::stdout().lock())?;
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> Result<(), Failure> {
    let mut cfg = SynthConfig::default();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.days {
        if d < 2 {
            return Err(Failure::Usage(anyhow::anyhow!("--days must be at least 2")));
        }
        cfg.days = d;
    }
    let files = generate(&cfg)
        .write_to_dir(Path::new(&args.out))
        .with_context(|| format!("writing to {}", args.out.display()))
        .map_err(run_failure)?;
    println!("{}", files.prices.display());
    println!("{}", files.caps.display());
    println!("{}", files.classes.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match &cli.command {
        Command::Backtest(a) => backtest(a),
        Command::Grid(a) => grid_cmd(a),
        Command::Rank(a) => rank_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
