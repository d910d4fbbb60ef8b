use std::io::Write;

use covfolio::cholpipe::{build_factor_series, reconstruct};
use covfolio::estimators::sample_cov;
use covfolio::market_data::{load_cap_panel, load_price_panel, select_universe, AssetClass, ClassMap};
use covfolio::optimizer::min_variance;
use covfolio::synth::{generate, SynthConfig};

fn write(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
    path
}

#[test]
fn csv_files_load_with_gaps_filled_and_stablecoins_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let classes = write(dir.path(), "classes.csv", "ticker,class\nSPY,stock\nBTC,crypto\nUSDT,crypto\n");
    let prices = write(
        dir.path(),
        "prices.csv",
        "date,SPY,BTC,USDT\n2021-01-01,10,100,1\n2021-01-02,,110,1\n2021-01-04,12,90,1\n",
    );
    let caps = write(dir.path(), "caps.csv", "date,SPY,BTC\n2021-01-01,5,50\n2021-01-04,6,40\n");
    let map = ClassMap::load(&classes).unwrap();
    let panel = load_price_panel(&prices, &map).unwrap();
    assert_eq!(panel.assets(), ["SPY", "BTC"]);
    assert_eq!(panel.len(), 4);
    // The missing Saturday and the absent Sunday row repeat the last quote.
    assert_eq!(panel.price(1, 0), Some(10.0));
    assert_eq!(panel.price(2, 0), Some(10.0));
    assert_eq!(panel.price(2, 1), Some(110.0));
    let caps = load_cap_panel(&caps).unwrap().aligned_to(&panel);
    let date = panel.dates()[2];
    let universe = select_universe(&caps, &panel.class_map(), date, 1, 1).unwrap();
    assert_eq!(universe, ["SPY", "BTC"]);
    assert_eq!(map.get("USDT"), Some(AssetClass::Crypto));
}

#[test]
fn synthetic_files_feed_the_estimation_chain() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate(&SynthConfig::default()).write_to_dir(dir.path()).unwrap();
    let map = ClassMap::load(&files.classes).unwrap();
    let panel = load_price_panel(&files.prices, &map).unwrap();
    let names: Vec<&str> = panel.assets().iter().map(String::as_str).collect();
    // Stocks have no quote after the final Friday, so end where every asset trades.
    let last = (0..panel.len())
        .rev()
        .find(|&t| (0..names.len()).all(|a| panel.is_available(a, t, t)))
        .unwrap();
    let end = panel.dates()[last];
    let start = panel.dates()[last - 120];
    let returns = panel.compute_returns(&names, start, end).unwrap();
    assert_eq!(returns.len(), 120);

    let window = 30;
    let series = build_factor_series(&returns, window).unwrap();
    assert_eq!(series.len(), 120 - window + 1);
    let last = reconstruct(&series.last_row().unwrap(), &returns.assets).unwrap();
    let direct = sample_cov(&returns.tail(window).values).unwrap();
    let err = (last.values() - &direct).norm() / direct.norm();
    assert!(err <= 1e-10, "{err}");

    let w = min_variance(&last, None, 0.0).unwrap();
    assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    // Stocks are far less volatile than crypto in the synthetic data.
    let stock_weight: f64 = w.weights()[..3].iter().sum();
    assert!(stock_weight > 0.5);
}
