//! Performance measures of an equity curve sampled once per calendar day.
//!
//! With `T = len − 1` days and daily returns `r_t = P_t/P_{t−1} − 1`:
//!
//! ```text
//! aRC = (P_T/P_0)^(365/T) − 1
//! aSD = sqrt((365/T)·Σ(r_t − r̄)²)
//! MDD = max_τ (max_{t≤τ} P_t − P_τ) / max_{t≤τ} P_t
//! MLD = longest time under water (strictly below the running peak), years
//! IR  = aRC/aSD
//! IR2 = IR·sign(aRC)·aRC/MDD
//! IR3 = aRC³/(aSD·MDD·MLD)
//! ```
//!
//! A ratio whose denominator is zero is undefined and reported as `None`.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("equity values must be positive and finite")]
    NonPositive,
    #[error("{values} values but {dates} dates")]
    Dimension { values: usize, dates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    #[serde(rename = "aRC")]
    pub arc: f64,
    #[serde(rename = "aSD")]
    pub asd: f64,
    #[serde(rename = "MD")]
    pub mdd: f64,
    #[serde(rename = "MLD")]
    pub mld: f64,
    #[serde(rename = "IR")]
    pub ir: Option<f64>,
    #[serde(rename = "IR2")]
    pub ir2: Option<f64>,
    #[serde(rename = "IR3")]
    pub ir3: Option<f64>,
}

fn check_positive(values: &[f64]) -> Result<(), MetricsError> {
    if values.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(MetricsError::NonPositive)
    }
}

fn check_len(values: &[f64], need: usize) -> Result<(), MetricsError> {
    if values.len() < need {
        return Err(MetricsError::TooShort {
            need,
            got: values.len(),
        });
    }
    Ok(())
}

pub fn annualized_return(values: &[f64]) -> Result<f64, MetricsError> {
    check_len(values, 2)?;
    check_positive(values)?;
    let t = (values.len() - 1) as f64;
    Ok((values[values.len() - 1] / values[0]).powf(DAYS_PER_YEAR / t) - 1.0)
}

pub fn daily_returns(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

pub fn annualized_stdev(values: &[f64]) -> Result<f64, MetricsError> {
    check_len(values, 3)?;
    check_positive(values)?;
    let r = daily_returns(values);
    let t = r.len() as f64;
    let mean = r.iter().sum::<f64>() / t;
    let ss: f64 = r.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((DAYS_PER_YEAR / t * ss).sqrt())
}

pub fn max_drawdown(values: &[f64]) -> Result<f64, MetricsError> {
    check_positive(values)?;
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    Ok(worst)
}

/// Longest stretch strictly below the running peak, from the peak date to
/// the recovery date (or to the last date if never recovered), in years.
pub fn max_loss_duration(values: &[f64], dates: &[NaiveDate]) -> Result<f64, MetricsError> {
    if values.len() != dates.len() {
        return Err(MetricsError::Dimension {
            values: values.len(),
            dates: dates.len(),
        });
    }
    check_len(values, 2)?;
    check_positive(values)?;
    let mut peak = values[0];
    let mut peak_date = dates[0];
    let mut under = false;
    let mut longest = 0i64;
    for (&v, &d) in values.iter().zip(dates).skip(1) {
        if v < peak {
            under = true;
        } else {
            if under {
                longest = longest.max((d - peak_date).num_days());
                under = false;
            }
            peak = v;
            peak_date = d;
        }
    }
    if under {
        longest = longest.max((dates[dates.len() - 1] - peak_date).num_days());
    }
    Ok(longest as f64 / DAYS_PER_YEAR)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0 && den.is_finite()).then(|| num / den)
}

pub fn information_ratios(arc: f64, asd: f64, mdd: f64, mld: f64) -> (Option<f64>, Option<f64>, Option<f64>) {
    let ir = ratio(arc, asd);
    let sign = if arc > 0.0 {
        1.0
    } else if arc < 0.0 {
        -1.0
    } else {
        0.0
    };
    let ir2 = ir.and_then(|ir| ratio(ir * sign * arc, mdd));
    let ir3 = ratio(arc.powi(3), asd * mdd * mld);
    (ir, ir2, ir3)
}

pub fn compute_metrics(values: &[f64], dates: &[NaiveDate]) -> Result<MetricsBlock, MetricsError> {
    let arc = annualized_return(values)?;
    let asd = annualized_stdev(values)?;
    let mdd = max_drawdown(values)?;
    let mld = max_loss_duration(values, dates)?;
    let (ir, ir2, ir3) = information_ratios(arc, asd, mdd, mld);
    Ok(MetricsBlock {
        arc,
        asd,
        mdd,
        mld,
        ir,
        ir2,
        ir3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn days(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|k| start + chrono::Days::new(k as u64)).collect()
    }

    #[test]
    fn annualized_return_examples() {
        assert_eq!(annualized_return(&[5.0; 10]).unwrap(), 0.0);
        let mut doubling = vec![1.0; 366];
        doubling[365] = 2.0;
        assert!((annualized_return(&doubling).unwrap() - 1.0).abs() < 1e-12);
        doubling[365] = 0.5;
        assert!((annualized_return(&doubling).unwrap() + 0.5).abs() < 1e-12);
        assert!(annualized_return(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn annualized_stdev_examples() {
        assert_eq!(annualized_stdev(&[3.0; 5]).unwrap(), 0.0);
        let mut v = vec![1.0];
        for k in 0..365 {
            let r = if k % 2 == 0 { 0.01 } else { -0.01 };
            v.push(v[k] * (1.0 + r));
        }
        // 183 up days and 182 down days leave r̄ = 0.01/365, which moves the
        // result by under 1e-6 from sqrt(365·1e-4).
        assert!((annualized_stdev(&v).unwrap() - (365.0f64 * 1e-4).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(max_drawdown(&[1.0, 0.5, 1.0]).unwrap(), 0.5);
        assert!((max_drawdown(&[1.0, 2.0, 1.0, 3.0, 0.6]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn loss_duration_examples() {
        assert_eq!(max_loss_duration(&[1.0, 2.0, 3.0], &days(3)).unwrap(), 0.0);
        let mut v = vec![0.9; 200];
        v[0] = 1.0;
        for x in v.iter_mut().skip(73) {
            *x = 1.0;
        }
        assert!((max_loss_duration(&v, &days(200)).unwrap() - 0.2).abs() < 1e-15);
        let mut never = vec![0.5; 366];
        never[0] = 1.0;
        assert_eq!(max_loss_duration(&never, &days(366)).unwrap(), 1.0);
    }

    #[test]
    fn ratio_examples() {
        let (ir, _, _) = information_ratios(0.15, 0.15 / 0.699, 0.3, 0.5);
        assert!((ir.unwrap() - 0.699).abs() < 1e-12);
        assert_eq!(information_ratios(0.0, 0.2, 0.5, 1.0), (Some(0.0), Some(0.0), Some(0.0)));
        let (ir, ir2, _) = information_ratios(-0.1, 0.2, 0.5, 1.0);
        assert!((ir.unwrap() + 0.5).abs() < 1e-15);
        assert!((ir2.unwrap() + 0.1).abs() < 1e-15);
        assert_eq!(information_ratios(0.1, 0.0, 0.0, 0.0), (None, None, None));
    }

    #[test]
    fn csv_leaves_undefined_cells_empty() {
        let m = compute_metrics(&[1.0, 1.0, 1.0], &days(3)).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(m).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text, "aRC,aSD,MD,MLD,IR,IR2,IR3\n0.0,0.0,0.0,0.0,,,\n");
    }

    proptest! {
        #[test]
        fn scale_invariance(rs in prop::collection::vec(-0.1f64..0.1, 3..60), k in 0.01f64..100.0) {
            let mut v = vec![1.0];
            for r in &rs {
                v.push(v[v.len() - 1] * (1.0 + r));
            }
            let d = days(v.len());
            let a = compute_metrics(&v, &d).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let b = compute_metrics(&scaled, &d).unwrap();
            prop_assert!((a.arc - b.arc).abs() <= 1e-9 * (1.0 + a.arc.abs()));
            prop_assert!((a.asd - b.asd).abs() <= 1e-9);
            prop_assert!((a.mdd - b.mdd).abs() <= 1e-12);
            prop_assert_eq!(a.mld, b.mld);
            prop_assert!((0.0..=1.0).contains(&a.mdd));
            if let Some(ir) = a.ir {
                prop_assert!(ir == 0.0 || ir.signum() == a.arc.signum());
            }
        }

        #[test]
        fn stdev_matches_two_pass_oracle(rs in prop::collection::vec(-0.2f64..0.2, 2..100)) {
            let mut v = vec![10.0];
            for r in &rs {
                v.push(v[v.len() - 1] * (1.0 + r));
            }
            let r = daily_returns(&v);
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var: f64 = r.iter().map(|x| (x - mean) * (x - mean)).sum();
            let oracle = (365.0 / n * var).sqrt();
            prop_assert!((annualized_stdev(&v).unwrap() - oracle).abs() <= 1e-12);
        }
    }
}
