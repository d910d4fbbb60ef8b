//! Two-stage greedy conversion of target weights into whole shares.
//!
//! Stage 1 buys `floor(ωᵢ·capital / (priceᵢ·(1 + c)))` shares of each asset.
//! Stage 2 repeatedly buys one share of the affordable asset with the largest
//! positive weight deficit `ωᵢ − sharesᵢ·priceᵢ/capital` (ties go to the lower
//! index) until no such purchase remains. An asset is affordable when
//! `price·(1 + c)` does not exceed the remaining cash.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationError {
    #[error("price of asset {index} must be positive and finite, got {price}")]
    BadPrice { index: usize, price: f64 },
    #[error("weight of asset {index} must be non-negative and finite, got {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("capital must be non-negative and finite, got {0}")]
    BadCapital(f64),
    #[error("commission rate must be in [0, 1), got {0}")]
    BadCommission(f64),
    #[error("{weights} weights but {prices} prices")]
    Dimension { weights: usize, prices: usize },
}

/// Whole-share holdings bought with `capital`.
///
/// `Σ sharesᵢ·priceᵢ + commission + leftover_cash = capital`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub shares: Vec<u64>,
    pub leftover_cash: f64,
    pub commission: f64,
}

impl Allocation {
    pub fn invested(&self, prices: &[f64]) -> f64 {
        self.shares.iter().zip(prices).map(|(&s, p)| s as f64 * p).sum()
    }
}

/// Commission-free allocation.
pub fn greedy_allocate(weights: &[f64], prices: &[f64], capital: f64) -> Result<Allocation, AllocationError> {
    greedy_allocate_with_commission(weights, prices, capital, 0.0)
}

/// Allocation where every purchase also pays `commission_rate × notional`.
pub fn greedy_allocate_with_commission(
    weights: &[f64],
    prices: &[f64],
    capital: f64,
    commission_rate: f64,
) -> Result<Allocation, AllocationError> {
    if weights.len() != prices.len() {
        return Err(AllocationError::Dimension {
            weights: weights.len(),
            prices: prices.len(),
        });
    }
    if let Some((index, &price)) = prices.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
        return Err(AllocationError::BadPrice { index, price });
    }
    if let Some((index, &weight)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(AllocationError::BadWeight { index, weight });
    }
    if !(capital.is_finite() && capital >= 0.0) {
        return Err(AllocationError::BadCapital(capital));
    }
    if !(commission_rate.is_finite() && (0.0..1.0).contains(&commission_rate)) {
        return Err(AllocationError::BadCommission(commission_rate));
    }
    let gross = |p: f64| p * (1.0 + commission_rate);

    let mut shares: Vec<u64> = weights
        .iter()
        .zip(prices)
        .map(|(&w, &p)| (w * capital / gross(p)).floor() as u64)
        .collect();
    let spent = |shares: &[u64]| -> f64 { shares.iter().zip(prices).map(|(&s, &p)| gross(p) * s as f64).sum() };
    let mut cash = capital - spent(&shares);

    if capital > 0.0 {
        loop {
            let mut pick: Option<(usize, f64)> = None;
            for i in 0..prices.len() {
                if gross(prices[i]) > cash {
                    continue;
                }
                let deficit = weights[i] - shares[i] as f64 * prices[i] / capital;
                if deficit > 0.0 && pick.is_none_or(|(_, d)| deficit > d) {
                    pick = Some((i, deficit));
                }
            }
            let Some((i, _)) = pick else { break };
            shares[i] += 1;
            cash -= gross(prices[i]);
        }
    }

    let invested: f64 = shares.iter().zip(prices).map(|(&s, p)| s as f64 * p).sum();
    let commission = commission_rate * invested;
    Ok(Allocation {
        leftover_cash: (capital - invested - commission).max(0.0),
        shares,
        commission,
    })
}
