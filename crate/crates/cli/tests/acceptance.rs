//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any blocking criterion fails. The last criterion is
//! informational and never fails the run.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use covfolio::allocator::greedy_allocate_with_commission;
use covfolio::backtest::{accounting_discrepancy, run_backtest, ModelSpec, StrategySpec};
use covfolio::cholpipe::{cholesky, n_series, reconstruct};
use covfolio::estimators::{eigen_range, ewma_cov, oracle_approx, oracle_approx_plain, sample_cov, CovMatrix, EstimatorKind, EstimatorSpec};
use covfolio::forecasters::copula::{ks_distance_std_normal, EmpiricalMarginal};
use covfolio::forecasters::train::{finite_difference_check, stream_rng};
use covfolio::forecasters::{DeepVar, GpVar, LstmParams, ProbConfig, TrainConfig};
use covfolio::metrics::{compute_metrics, information_ratios};
use covfolio::optimizer::{min_variance, min_variance_with, objective, MinVarianceOptions};
use covfolio::synth::{generate, SynthConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn assets(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("A{i}")).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn cholesky_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_err: f64 = 0.0;
    for k in 0..1000 {
        let n = 1 + k % 12;
        let b = gaussian(&mut rng, n, n + 2);
        let cov = CovMatrix::new(assets(n), &b * b.transpose() / (n + 2) as f64).expect("valid covariance");
        let factor = cholesky(&cov).expect("cholesky");
        let back = reconstruct(&factor.flatten(), &assets(n)).expect("reconstruct");
        let err = (back.values() - cov.values()).norm() / cov.values().norm();
        worst_err = worst_err.max(err);
    }
    let mut worst_neg: f64 = 0.0;
    for k in 0..1000 {
        let n = 1 + k % 12;
        let v: Vec<f64> = (0..n_series(n)).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let cov = reconstruct(&v, &assets(n)).expect("reconstruct");
        let (min, max) = eigen_range(cov.values());
        worst_neg = worst_neg.max(-min / max.max(1e-300));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_err <= 1e-10 && worst_neg <= 1e-12 && elapsed < Duration::from_secs(5),
        format!(
            "max rel Frobenius error {worst_err:.2e} (tol 1e-10), worst -λmin/λmax {worst_neg:.2e}, {:.2}s (limit 5s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn simplex_grid_min(sigma: &DMatrix<f64>, prev: Option<&[f64]>, cost: f64) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..=100 {
        for b in 0..=(100 - a) {
            let w = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
            best = best.min(objective(sigma, &w, prev, cost));
        }
    }
    best
}

fn optimizer_vs_grid() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap = f64::NEG_INFINITY;
    for k in 0..200 {
        let b = gaussian(&mut rng, 3, 5);
        let sigma = &b * b.transpose() / 5.0;
        let cov = CovMatrix::new(assets(3), sigma.clone()).expect("covariance");
        let (prev, cost) = if k % 2 == 0 {
            (None, 0.0)
        } else {
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            (Some(raw.iter().map(|x| x / s).collect::<Vec<_>>()), 0.005)
        };
        let sol = min_variance_with(&cov, prev.as_deref(), cost, &MinVarianceOptions::default()).expect("solve");
        let grid = simplex_grid_min(&sigma, prev.as_deref(), cost);
        worst_gap = worst_gap.max(sol.objective - grid);
    }
    let diag = CovMatrix::new(assets(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0])).expect("cov");
    let w = min_variance(&diag, None, 0.0).expect("solve");
    let diag_err = (w.weights()[0] - 0.8).abs().max((w.weights()[1] - 0.2).abs());
    let perfect = CovMatrix::new(assets(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).expect("cov");
    let w = min_variance(&perfect, None, 0.0).expect("solve");
    let corr_err = (w.weights()[0] - 1.0).abs().max(w.weights()[1].abs());
    let elapsed = start.elapsed();
    outcome(
        worst_gap <= 1e-4 && diag_err <= 1e-4 && corr_err <= 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "worst objective - grid optimum {worst_gap:.2e} (tol 1e-4), diag(1,4) weight error {diag_err:.1e}, \
             correlation-1 weight error {corr_err:.1e}, {:.2}s (limit 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn ewma_unrolled() -> Outcome {
    let lambda = EstimatorSpec::default().lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = 2 + k % 5;
        let seed = 10 + k % 7;
        let rows = seed + 20 + k % 30;
        let h = gaussian(&mut rng, rows, n) * 0.02;
        let rec = ewma_cov(&h, lambda, seed).expect("ewma");
        let head = h.rows(0, seed).into_owned();
        let mu = head.row_mean().transpose();
        let t_len = rows - seed;
        let mut unrolled = sample_cov(&head).expect("sample") * lambda.powi(t_len as i32);
        for t in seed..rows {
            let d = h.row(t).transpose() - &mu;
            unrolled += (&d * d.transpose()) * ((1.0 - lambda) * lambda.powi((rows - 1 - t) as i32));
        }
        worst = worst.max((rec - &unrolled).norm() / unrolled.norm());
    }
    outcome(
        worst <= 1e-12 && lambda == 0.94,
        format!("decay {lambda}, max rel difference recursion vs unrolled sum {worst:.2e} (tol 1e-12)"),
    )
}

fn oracle_approximating() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_iters = 0;
    let mut all_converged = true;
    let mut plain_unconverged = 0;
    for k in 0..100 {
        let p = 2 + k % 9;
        let n = 5 + k % 40;
        let s = sample_cov(&gaussian(&mut rng, n, p)).expect("sample");
        let r = oracle_approx(&s, n, 100, 1e-8).expect("oas");
        all_converged &= r.converged;
        max_iters = max_iters.max(r.rho_path.len());
        if !oracle_approx_plain(&s, n, 100, 1e-8).expect("oas").converged {
            plain_unconverged += 1;
        }
    }
    let mut worst_cond_min = f64::INFINITY;
    for _ in 0..100 {
        let s = sample_cov(&gaussian(&mut rng, 5, 10)).expect("sample");
        let r = oracle_approx(&s, 5, 100, 1e-8).expect("oas");
        let (min, max) = eigen_range(&r.cov);
        worst_cond_min = worst_cond_min.min(min / max);
    }
    outcome(
        all_converged && max_iters <= 100 && worst_cond_min > 1e-10,
        format!(
            "accelerated iteration: all converged: {all_converged}, max iterations {max_iters} (limit 100); \
             unaccelerated iteration unconverged after 100 steps on {plain_unconverged}/100; \
             p=10 n=5 smallest λmin/λmax {worst_cond_min:.3e}"
        ),
    )
}

fn lstm_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(5, 0);
    let mut model = LstmParams::init(2, &[3], 2, &mut rng);
    let window: Vec<Vec<f64>> = (0..4)
        .map(|t| vec![(0.7 * t as f64).sin(), (0.3 * t as f64).cos() - 0.4])
        .collect();
    let errs = finite_difference_check(&mut model, &window, &[0.25, -0.6], 1e-5);
    let (name, worst) = errs
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("parameter groups");
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "{} parameter groups, worst relative error {worst:.2e} in {name} (tol 1e-4), {:.2}s (limit 10s)",
            errs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn probabilistic_heads() -> Outcome {
    // Sigma calibration on unit white noise.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<Vec<f64>> = (0..400).map(|_| (0..2).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let prob = ProbConfig {
        hidden: 5,
        scaling: false,
        ..ProbConfig::default()
    };
    let train = TrainConfig {
        epochs: 30,
        seq_len: 10,
        validation_len: 40,
        seed: 6,
        ..TrainConfig::default()
    };
    let (model, _) = DeepVar::train(&data, &prob, &train).expect("deepvar training");
    let mut sigmas = Vec::new();
    for t in train.seq_len..data.len() {
        let window: Vec<&[f64]> = data[t - train.seq_len..t].iter().map(Vec::as_slice).collect();
        sigmas.extend(model.heads(&window).expect("heads").sigma);
    }
    let mean_sigma = sigmas.iter().sum::<f64>() / sigmas.len() as f64;

    // Copula transform of a skewed continuous sample.
    let exp = Exp::new(1.0).expect("rate");
    let sample: Vec<f64> = (0..1000).map(|_| rng.sample(exp)).collect();
    let marginal = EmpiricalMarginal::fit(&sample).expect("marginal");
    let z: Vec<f64> = sample.iter().map(|&x| marginal.to_gaussian(x)).collect();
    let ks = ks_distance_std_normal(&z);

    // Rank-0 low-rank path against the diagonal path.
    let cfg = ProbConfig {
        hidden: 4,
        low_rank: true,
        rank: 0,
        ..ProbConfig::default()
    };
    let mut gap: f64 = 0.0;
    for seed in 0..5 {
        let mut r = stream_rng(seed, 0);
        let gp = GpVar::new(3, &cfg, &mut r);
        let window: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| r.sample(StandardNormal)).collect()).collect();
        let w: Vec<&[f64]> = window.iter().map(Vec::as_slice).collect();
        let target: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
        let low = gp.nll(&w, &target, None, None).expect("low-rank nll");
        let diag = gp.with_low_rank(false).nll(&w, &target, None, None).expect("diagonal nll");
        gap = gap.max((low - diag).abs());
    }
    outcome(
        (0.8..=1.2).contains(&mean_sigma) && ks < 0.05 && gap <= 1e-10,
        format!(
            "DeepVAR mean sigma on unit noise {mean_sigma:.3} (range [0.8, 1.2]), copula KS {ks:.4} (< 0.05), \
             rank-0 vs diagonal NLL gap {gap:.1e} (tol 1e-10)"
        ),
    )
}

fn dates(n: usize) -> Vec<chrono::NaiveDate> {
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).expect("date");
    (0..n).map(|k| start + chrono::Days::new(k as u64)).collect()
}

fn alternating_path(r1: f64, r2: f64, days: usize) -> Vec<f64> {
    let mut v = vec![100.0];
    for t in 0..days {
        let r = if t % 2 == 0 { r1 } else { r2 };
        v.push(v[t] * (1.0 + r));
    }
    v
}

fn metrics_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut check = |a: f64, b: f64| worst = worst.max((a - b).abs());

    // Alternating up/down days with a net gain every two days.
    let (r1, r2, days) = (0.02, -0.01, 730);
    let v = alternating_path(r1, r2, days);
    let m = compute_metrics(&v, &dates(v.len())).expect("metrics");
    let arc = ((1.0 + r1) * (1.0 + r2)).powf(365.0 / 2.0) - 1.0;
    let asd = 365f64.sqrt() * (r1 - r2) / 2.0;
    check(m.arc, arc);
    check(m.asd, asd);
    check(m.mdd, -r2);
    check(m.mld, 2.0 / 365.0);
    check(m.ir.expect("IR"), arc / asd);

    // Steady decline: never recovers.
    let d: f64 = 0.001;
    let v: Vec<f64> = (0..=365).map(|t| (1.0 - d).powi(t)).collect();
    let m = compute_metrics(&v, &dates(v.len())).expect("metrics");
    check(m.arc, (1.0 - d).powi(365) - 1.0);
    check(m.asd, 0.0);
    check(m.mdd, 1.0 - (1.0 - d).powi(365));
    check(m.mld, 1.0);
    let closed_form = worst;

    let (_, ir2, _) = information_ratios(-0.1, 0.2, 0.5, 1.0);
    let sign_ok = (ir2.expect("IR2") + 0.1).abs() <= 1e-12;

    // Curve with aRC 0.15 and aSD = 0.15/0.699.
    let target_asd = 0.15 / 0.699;
    let g = 1.15f64.powf(2.0 / 365.0);
    let delta = 2.0 * target_asd / 365f64.sqrt();
    let down = (-delta + (delta * delta + 4.0 * g).sqrt()) / 2.0 - 1.0;
    let v = alternating_path(down + delta, down, 730);
    let m = compute_metrics(&v, &dates(v.len())).expect("metrics");
    let ref_err = (m.ir.expect("IR") - 0.699).abs().max((m.arc - 0.15).abs());

    outcome(
        closed_form <= 1e-9 && sign_ok && ref_err <= 1e-3,
        format!(
            "closed-form max error {closed_form:.2e} (tol 1e-9), IR2 sign case ok: {sign_ok}, \
             reference curve IR {:.4} aRC {:.4} (tol 1e-3)",
            m.ir.unwrap_or(f64::NAN),
            m.arc
        ),
    )
}

fn allocation_and_accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..10);
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2000.0)).collect();
        let capital = rng.random_range(0.0..100_000.0);
        let c = if rng.random::<bool>() { 0.005 } else { 0.0 };
        let a = greedy_allocate_with_commission(&w, &prices, capital, c).expect("allocation");
        worst_identity = worst_identity.max((a.invested(&prices) + a.commission + a.leftover_cash - capital).abs());
    }

    let data = generate(&SynthConfig::default());
    let (prices, caps) = (data.price_panel().expect("panel"), data.cap_panel().expect("caps"));
    let mut worst_daily: f64 = 0.0;
    let mut worst_ledger: f64 = 0.0;
    let mut per_trade_exact = true;
    let mut trades = 0;
    for kind in [EstimatorKind::Sample, EstimatorKind::ShrinkConstCorr] {
        for (window, rebalance) in [(30, 7), (60, 30)] {
            let spec = StrategySpec::new(window, rebalance, ModelSpec::Estimator(EstimatorSpec::new(kind, window)));
            let report = run_backtest(&prices, &caps, &spec).expect("backtest");
            worst_daily = worst_daily.max(accounting_discrepancy(&report, &prices) / spec.initial_capital);
            let notional: f64 = report.trades.iter().map(|t| t.notional()).sum();
            worst_ledger = worst_ledger.max((report.total_commission() - 0.005 * notional).abs());
            per_trade_exact &= report.trades.iter().all(|t| t.commission == 0.005 * t.notional());
            trades += report.trades.len();
        }
    }
    outcome(
        worst_identity <= 1e-9 && worst_daily <= 1e-9 && per_trade_exact && worst_ledger <= 1e-9,
        format!(
            "allocation identity max error {worst_identity:.2e} (tol 1e-9); daily value identity max error \
             {worst_daily:.2e}·capital (tol 1e-9); {trades} trades each charged exactly 0.005·notional: \
             {per_trade_exact}; ledger total vs 0.005·Σ|notional| differs by {worst_ledger:.1e}"
        ),
    )
}

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_covfolio"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = cli().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

const DATA_PATHS: &str = r#"
prices = "data/prices.csv"
caps = "data/caps.csv"
classes = "data/classes.csv"
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("{DATA_PATHS}{body}")).expect("write config");
    path
}

fn prepare_data(dir: &Path) -> Result<(), String> {
    run_cli(&["synth", "--out", dir.join("data").to_str().expect("utf-8 path")])
}

fn read_summary(path: &Path) -> Result<Vec<csv::StringRecord>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    rdr.records().collect::<Result<_, _>>().map_err(|e| e.to_string())
}

fn grid_determinism(dir: &Path) -> Outcome {
    let body = r#"
seed = 99
[grid]
windows = [30]
rebalances = [30, 60]
[[grid.models]]
estimator = { kind = "ShrinkSingleFactor" }
[[grid.models]]
forecaster = { family = "lstm", train = { hidden = [5], epochs = 20 } }
[[grid.models]]
forecaster = { family = "gpvar", train = { epochs = 5 }, prob = { hidden = 5, low_rank = true, copula = true, mc_samples = 20 } }
"#;
    let cfg = write_config(dir, "determinism.toml", body);
    let mut summaries = Vec::new();
    for (k, jobs) in ["1", "3"].iter().enumerate() {
        let out = dir.join(format!("determinism_{k}"));
        if let Err(e) = run_cli(&["grid", "--config", cfg.to_str().unwrap(), "--jobs", jobs, "--out", out.to_str().unwrap()]) {
            return outcome(false, format!("grid run failed: {e}"));
        }
        let summary = std::fs::read(out.join("summary.csv")).unwrap_or_default();
        let aggregate = std::fs::read(out.join("aggregate.csv")).unwrap_or_default();
        summaries.push((summary, aggregate));
    }
    let same = !summaries[0].0.is_empty() && summaries[0] == summaries[1];
    let rows = summaries[0].0.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    outcome(
        same,
        format!("two runs (1 and 3 workers) with master seed 99 over {rows} cells: summary and aggregate byte-identical: {same}"),
    )
}

fn smoke(dir: &Path) -> (Outcome, Option<Vec<csv::StringRecord>>) {
    let body = r#"
seed = 2024
jobs = 0
[grid]
windows = [30, 60]
rebalances = [30, 60]
[[grid.models]]
estimator = { kind = "Sample" }
[[grid.models]]
estimator = { kind = "Ewma" }
[[grid.models]]
forecaster = { family = "lstm", train = { hidden = [5], seq_len = 15, batch_size = 8 } }
"#;
    let cfg = write_config(dir, "smoke.toml", body);
    let out = dir.join("smoke");
    let start = Instant::now();
    if let Err(e) = run_cli(&["grid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]) {
        return (outcome(false, format!("grid run failed: {e}")), None);
    }
    let elapsed = start.elapsed();
    let rows = match read_summary(&out.join("summary.csv")) {
        Ok(r) => r,
        Err(e) => return (outcome(false, e), None),
    };
    let all_ok = rows.iter().all(|r| &r[4] == "ok");
    let populated = rows.iter().all(|r| (5..12).all(|k| !r[k].is_empty()));
    let mut positive = true;
    for r in &rows {
        let equity = out.join("runs").join(&r[0]).join("equity.csv");
        match csv::Reader::from_path(&equity) {
            Ok(mut rdr) => {
                for rec in rdr.records() {
                    let v: f64 = rec.ok().and_then(|x| x[1].parse().ok()).unwrap_or(f64::NAN);
                    positive &= v > 0.0;
                }
            }
            Err(_) => positive = false,
        }
    }
    let pass = rows.len() == 12 && all_ok && populated && positive && elapsed < Duration::from_secs(600);
    (
        outcome(
            pass,
            format!(
                "{} runs in {:.1}s (limit 600s); all status=ok: {all_ok}; equity curves positive: {positive}; \
                 metric rows populated: {populated}",
                rows.len(),
                elapsed.as_secs_f64()
            ),
        ),
        Some(rows),
    )
}

fn mean_ir(rows: &[csv::StringRecord], family: &str) -> Option<(f64, usize)> {
    let irs: Vec<f64> = rows
        .iter()
        .filter(|r| &r[3] == family && &r[4] == "ok")
        .filter_map(|r| r[9].parse().ok())
        .collect();
    (!irs.is_empty()).then(|| (irs.iter().sum::<f64>() / irs.len() as f64, irs.len()))
}

fn lstm_vs_persistence(dir: &Path, smoke_rows: Option<&[csv::StringRecord]>) -> Outcome {
    let Some(smoke_rows) = smoke_rows else {
        return outcome(false, "no LSTM results (smoke grid failed)");
    };
    let body = r#"
seed = 2024
jobs = 0
[grid]
windows = [30, 60]
rebalances = [30, 60]
[[grid.models]]
forecaster = { family = "persistence" }
"#;
    let cfg = write_config(dir, "persistence.toml", body);
    let out = dir.join("persistence");
    if let Err(e) = run_cli(&["grid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]) {
        return outcome(false, format!("grid run failed: {e}"));
    }
    let rows = match read_summary(&out.join("summary.csv")) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    match (mean_ir(smoke_rows, "lstm"), mean_ir(&rows, "persistence")) {
        (Some((lstm, nl)), Some((pers, np))) => outcome(
            lstm >= pers,
            format!(
                "mean IR lstm {lstm:.4} over {nl} runs vs persistence {pers:.4} over {np} runs \
                 (synthetic data seed {}, grid seed 2024)",
                SynthConfig::default().seed
            ),
        ),
        _ => outcome(false, "missing IR values"),
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let data_ready = prepare_data(dir.path());

    let mut results: Vec<(&str, Outcome, bool)> = vec![
        ("cholesky round-trip", cholesky_round_trip(), true),
        ("optimizer vs brute force", optimizer_vs_grid(), true),
        ("EWMA recursion", ewma_unrolled(), true),
        ("oracle-approximating shrinkage", oracle_approximating(), true),
        ("LSTM gradient check", lstm_gradient_check(), true),
        ("probabilistic heads", probabilistic_heads(), true),
        ("metrics oracle", metrics_oracle(), true),
        ("allocation and accounting", allocation_and_accounting(), true),
    ];
    match data_ready {
        Ok(()) => {
            results.push(("grid determinism", grid_determinism(dir.path()), true));
            let (smoke_outcome, rows) = smoke(dir.path());
            results.push(("end-to-end smoke", smoke_outcome, true));
            results.push(("LSTM vs persistence (informational)", lstm_vs_persistence(dir.path(), rows.as_deref()), false));
        }
        Err(e) => {
            for (name, blocking) in [
                ("grid determinism", true),
                ("end-to-end smoke", true),
                ("LSTM vs persistence (informational)", false),
            ] {
                results.push((name, outcome(false, format!("synth failed: {e}")), blocking));
            }
        }
    }

    let mut failed = 0;
    for (k, (name, o, blocking)) in results.iter().enumerate() {
        let status = match (o.pass, blocking) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        println!("criterion {:>2} [{status}] {name}: {}", k + 1, o.detail);
        if !o.pass && *blocking {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} blocking criteria failed");
        std::process::exit(1);
    }
    println!("all blocking criteria passed");
}
