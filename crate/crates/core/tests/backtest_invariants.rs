use covfolio::backtest::{accounting_discrepancy, run_backtest, ModelSpec, StrategySpec};
use covfolio::estimators::{EstimatorKind, EstimatorSpec};
use covfolio::synth::{generate, SynthConfig};
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = EstimatorKind> {
    prop::sample::select(EstimatorKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ledger_invariants_hold_for_any_strategy(
        seed in 0u64..1000,
        kind in kinds(),
        window in 5usize..40,
        rebalance in 1usize..45,
        commission in prop_oneof![Just(0.0), Just(0.005), Just(0.02)],
        n_stock in 0usize..4,
        n_crypto in 1usize..4,
    ) {
        let data = generate(&SynthConfig { days: 260, seed, ..SynthConfig::default() });
        let prices = data.price_panel().unwrap();
        let caps = data.cap_panel().unwrap();
        let mut spec = StrategySpec::new(window, rebalance, ModelSpec::Estimator(EstimatorSpec::new(kind, window)));
        spec.commission = commission;
        spec.n_stock = n_stock;
        spec.n_crypto = n_crypto;
        let report = run_backtest(&prices, &caps, &spec).unwrap();

        prop_assert!(!report.trades.is_empty());
        prop_assert!(!report.rebalances.is_empty());
        let cap = spec.initial_capital;
        prop_assert!(accounting_discrepancy(&report, &prices) <= 1e-9 * cap);
        prop_assert!(report.equity.iter().all(|p| p.cash >= 0.0 && p.value > 0.0));
        prop_assert_eq!(report.replay_final_value(&prices), report.equity.last().unwrap().value);
        for t in &report.trades {
            prop_assert_eq!(t.commission, commission * t.notional());
        }
        for r in &report.rebalances {
            prop_assert_eq!(r.universe.len(), n_stock + n_crypto);
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(r.weights.iter().all(|&w| w >= 0.0));
        }
        // Purchases on a rebalance date never exceed what the portfolio is worth.
        let first = report.rebalances[0].date;
        let bought: f64 = report.trades.iter().filter(|t| t.date == first).map(|t| t.notional() + t.commission).sum();
        prop_assert!(bought <= cap * (1.0 + 1e-12));
    }
}
