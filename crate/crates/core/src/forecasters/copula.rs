//! Per-series input transforms for the probabilistic forecasters: mean
//! scaling and the Gaussian-copula marginal transform `Φ⁻¹ ∘ F̂`.

use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Empirical marginal with piecewise-linear CDF and quantile function.
///
/// Sorted training values get plotting positions `(rank − 0.5)/n`; tied
/// values share the average position. Outside the observed range the CDF
/// is clamped to the first/last position.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMarginal {
    knots: Vec<f64>,
    probs: Vec<f64>,
}

impl EmpiricalMarginal {
    /// `None` for fewer than two distinct finite values.
    pub fn fit(values: &[f64]) -> Option<Self> {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.is_empty() {
            return None;
        }
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut knots = Vec::new();
        let mut probs = Vec::new();
        let mut k = 0;
        while k < sorted.len() {
            let mut e = k;
            while e + 1 < sorted.len() && sorted[e + 1] == sorted[k] {
                e += 1;
            }
            // Average of positions (j + 0.5)/n for j in k..=e.
            knots.push(sorted[k]);
            probs.push(((k + e) as f64 / 2.0 + 0.5) / n);
            k = e + 1;
        }
        (knots.len() >= 2).then_some(Self { knots, probs })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        interpolate(&self.knots, &self.probs, x)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        interpolate(&self.probs, &self.knots, p)
    }

    pub fn to_gaussian(&self, x: f64) -> f64 {
        std_normal().inverse_cdf(self.cdf(x))
    }

    pub fn from_gaussian(&self, g: f64) -> f64 {
        self.quantile(std_normal().cdf(g))
    }
}

/// Piecewise-linear interpolation on increasing `xs`, clamped at the ends.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v < x);
    if xs[hi] == x {
        return ys[hi];
    }
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + w * (ys[hi] - ys[lo])
}

/// Scaling and copula transforms fitted on a training range, one entry per series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessor {
    scales: Option<Vec<f64>>,
    marginals: Option<Vec<Option<EmpiricalMarginal>>>,
}

impl Preprocessor {
    /// Identity transform.
    pub fn identity() -> Self {
        Self::default()
    }

    /// `data` is rows = time. Scaling divides series `i` by `1 + mean|x_i|`;
    /// the copula maps it through its empirical CDF and `Φ⁻¹`. A constant
    /// series bypasses the copula with a warning.
    pub fn fit(data: &[Vec<f64>], scaling: bool, copula: bool) -> Self {
        let m = data.first().map_or(0, Vec::len);
        let column = |i: usize| data.iter().map(move |r| r[i]);
        let scales = scaling.then(|| {
            (0..m)
                .map(|i| 1.0 + column(i).map(f64::abs).sum::<f64>() / data.len().max(1) as f64)
                .collect::<Vec<_>>()
        });
        let marginals = copula.then(|| {
            (0..m)
                .map(|i| {
                    let scale = scales.as_ref().map_or(1.0, |s| s[i]);
                    let col: Vec<f64> = column(i).map(|v| v / scale).collect();
                    let fitted = EmpiricalMarginal::fit(&col);
                    if fitted.is_none() {
                        log::warn!("series {i} is constant over the training range; copula transform bypassed");
                    }
                    fitted
                })
                .collect::<Vec<_>>()
        });
        Self { scales, marginals }
    }

    pub fn forward(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = self.scales.as_ref().map_or(v, |s| v / s[i]);
                match self.marginals.as_ref().and_then(|m| m[i].as_ref()) {
                    Some(marg) => marg.to_gaussian(v),
                    None => v,
                }
            })
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = match self.marginals.as_ref().and_then(|m| m[i].as_ref()) {
                    Some(marg) => marg.from_gaussian(v),
                    None => v,
                };
                self.scales.as_ref().map_or(v, |s| v * s[i])
            })
            .collect()
    }

    pub fn forward_all(&self, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
        data.iter().map(|r| self.forward(r)).collect()
    }
}

/// Kolmogorov–Smirnov distance between a sample and the standard normal.
pub fn ks_distance_std_normal(sample: &[f64]) -> f64 {
    let mut s: Vec<f64> = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let norm = std_normal();
    s.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = norm.cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Per-column median of `samples` (rows = draws).
pub fn column_medians(samples: &[Vec<f64>]) -> Vec<f64> {
    let m = samples.first().map_or(0, Vec::len);
    let n = samples.len();
    (0..m)
        .map(|i| {
            let mut col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            col.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                col[n / 2]
            } else {
                0.5 * (col[n / 2 - 1] + col[n / 2])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Exp1;

    #[test]
    fn copula_of_continuous_series_is_close_to_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Skewed input: exponential.
        let xs: Vec<f64> = (0..1000).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let marg = EmpiricalMarginal::fit(&xs).unwrap();
        let g: Vec<f64> = xs.iter().map(|&x| marg.to_gaussian(x)).collect();
        assert!(ks_distance_std_normal(&g) < 0.05);
    }

    #[test]
    fn copula_round_trip_on_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut xs: Vec<f64> = (0..300).map(|_| rng.random_range(-2.0..3.0)).collect();
        xs.extend([0.5, 0.5, 0.5]);
        let marg = EmpiricalMarginal::fit(&xs).unwrap();
        for &x in &xs {
            assert!((marg.from_gaussian(marg.to_gaussian(x)) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_series_bypasses_copula() {
        assert!(EmpiricalMarginal::fit(&[2.0; 10]).is_none());
        let data: Vec<Vec<f64>> = (0..10).map(|t| vec![2.0, t as f64]).collect();
        let pre = Preprocessor::fit(&data, false, true);
        let out = pre.forward(&[2.0, 4.0]);
        assert_eq!(out[0], 2.0);
        assert!(out[1].abs() < 0.2);
    }

    #[test]
    fn mean_scaling_round_trip() {
        let data: Vec<Vec<f64>> = vec![vec![1.0, -4.0], vec![3.0, 0.0]];
        let pre = Preprocessor::fit(&data, true, false);
        // scales: 1 + 2 = 3 and 1 + 2 = 3
        assert_eq!(pre.forward(&[3.0, -6.0]), vec![1.0, -2.0]);
        assert_eq!(pre.inverse(&[1.0, -2.0]), vec![3.0, -6.0]);
    }

    #[test]
    fn medians() {
        assert_eq!(column_medians(&[vec![1.0], vec![5.0], vec![2.0]]), vec![2.0]);
        assert_eq!(column_medians(&[vec![1.0], vec![5.0]]), vec![3.0]);
    }

    #[test]
    fn quantile_clamps_outside_range() {
        let marg = EmpiricalMarginal::fit(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(marg.quantile(0.0), 1.0);
        assert_eq!(marg.quantile(1.0), 3.0);
        assert!((marg.cdf(2.0) - 0.5).abs() < 1e-15);
        assert!((marg.cdf(1.5) - (1.0 / 6.0 + 0.5) / 2.0).abs() < 1e-15);
    }
}
