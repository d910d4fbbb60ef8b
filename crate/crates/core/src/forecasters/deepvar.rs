//! DeepVAR-style forecaster: an LSTM over the full series vector emitting a
//! Gaussian mean and scale per series, trained by negative log-likelihood.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::copula::{column_medians, Preprocessor};
use super::lstm::{sigmoid, LstmStack};
use super::params::{Block, ParamSet};
use super::train::{self, Trainable};
use super::{ForecastError, ProbConfig, TrainConfig, TrainReport};

pub(crate) const SIGMA_FLOOR: f64 = 1e-6;
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepVar {
    params: ParamSet,
    stack: LstmStack,
    mu_w: usize,
    mu_b: usize,
    sigma_w: usize,
    sigma_b: usize,
    n_series: usize,
    preprocess: Preprocessor,
}

/// Per-series predictive parameters in model (transformed) space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeads {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DeepVar {
    pub fn new<R: Rng>(n_series: usize, cfg: &ProbConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let stack = LstmStack::register(&mut params, "lstm", n_series, &[cfg.hidden, cfg.hidden]);
        let h = stack.output_size();
        let mu_w = params.push("mu.W", n_series, h);
        let mu_b = params.push("mu.b", 1, n_series);
        let sigma_w = params.push("sigma.W", n_series, h);
        let sigma_b = params.push("sigma.b", 1, n_series);
        stack.init(params.values_mut(), rng);
        let bound = 1.0 / (h as f64).sqrt();
        for name in ["mu.W", "mu.b", "sigma.W", "sigma.b"] {
            params.init_uniform(name, bound, rng);
        }
        Self {
            params,
            stack,
            mu_w,
            mu_b,
            sigma_w,
            sigma_b,
            n_series,
            preprocess: Preprocessor::identity(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocess
    }

    fn heads_from_hidden(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.params.values();
        let hsz = h.len();
        let lin = |w: usize, b: usize, m: usize| {
            p[b + m] + p[w + m * hsz..w + (m + 1) * hsz].iter().zip(h).map(|(a, x)| a * x).sum::<f64>()
        };
        let mu: Vec<f64> = (0..self.n_series).map(|m| lin(self.mu_w, self.mu_b, m)).collect();
        let raw: Vec<f64> = (0..self.n_series).map(|m| lin(self.sigma_w, self.sigma_b, m)).collect();
        let sigma = raw.iter().map(|&a| softplus(a) + SIGMA_FLOOR).collect();
        (mu, sigma, raw)
    }

    /// Predictive mean and scale (model space) for the next step after `window`
    /// (already transformed).
    pub fn heads(&self, window: &[&[f64]]) -> Result<GaussianHeads, ForecastError> {
        let trace = self.stack.forward(self.params.values(), window)?;
        let (mu, sigma, _) = self.heads_from_hidden(trace.last_hidden());
        Ok(GaussianHeads { mu, sigma })
    }

    /// Mean Gaussian negative log-likelihood per series.
    pub fn nll(&self, window: &[&[f64]], target: &[f64], grad: Option<&mut [f64]>) -> Result<f64, ForecastError> {
        if target.len() != self.n_series {
            return Err(ForecastError::Shape(format!(
                "target width {} but model has {} series",
                target.len(),
                self.n_series
            )));
        }
        let p = self.params.values();
        let trace = self.stack.forward(p, window)?;
        let h = trace.last_hidden();
        let (mu, sigma, raw) = self.heads_from_hidden(h);
        let m = self.n_series as f64;
        let mut loss = 0.0;
        for k in 0..self.n_series {
            let z = (target[k] - mu[k]) / sigma[k];
            loss += sigma[k].ln() + 0.5 * z * z + HALF_LN_2PI;
        }
        loss /= m;
        if let Some(grad) = grad {
            let hsz = h.len();
            let mut dh = vec![0.0; hsz];
            for k in 0..self.n_series {
                let e = target[k] - mu[k];
                let s = sigma[k];
                let d_mu = -e / (s * s) / m;
                let d_raw = (1.0 / s - e * e / (s * s * s)) * sigmoid(raw[k]) / m;
                for (w, b, d) in [(self.mu_w, self.mu_b, d_mu), (self.sigma_w, self.sigma_b, d_raw)] {
                    grad[b + k] += d;
                    let row = w + k * hsz;
                    for j in 0..hsz {
                        grad[row + j] += d * h[j];
                        dh[j] += d * p[row + j];
                    }
                }
            }
            self.stack.backward(p, &trace, &dh, grad);
        }
        Ok(loss)
    }

    /// Fits the preprocessing on `series` and trains on the transformed data.
    pub fn train(series: &[Vec<f64>], prob: &ProbConfig, cfg: &TrainConfig) -> Result<(Self, TrainReport), ForecastError> {
        prob.validate(series.first().map_or(0, Vec::len))?;
        let m = series.first().map_or(0, Vec::len);
        let mut rng = train::stream_rng(cfg.seed, train::STREAM_INIT);
        let mut model = Self::new(m, prob, &mut rng);
        model.preprocess = Preprocessor::fit(series, prob.scaling, prob.copula);
        let data = model.preprocess.forward_all(series);
        let report = train::fit(&mut model, &data, cfg)?;
        Ok((model, report))
    }

    /// Median of `mc_samples` one-step draws, in original units.
    pub fn forecast(&self, series: &[Vec<f64>], seq_len: usize, mc_samples: usize, seed: u64) -> Result<Vec<f64>, ForecastError> {
        if series.len() < seq_len || seq_len == 0 {
            return Err(ForecastError::SeriesTooShort {
                need: seq_len.max(1),
                got: series.len(),
            });
        }
        let tail = self.preprocess.forward_all(&series[series.len() - seq_len..]);
        let window: Vec<&[f64]> = tail.iter().map(Vec::as_slice).collect();
        let heads = self.heads(&window)?;
        let mut rng = train::stream_rng(seed, train::STREAM_FORECAST);
        let samples: Vec<Vec<f64>> = (0..mc_samples.max(1))
            .map(|_| {
                let draw: Vec<f64> = heads
                    .mu
                    .iter()
                    .zip(&heads.sigma)
                    .map(|(mu, s)| mu + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                self.preprocess.inverse(&draw)
            })
            .collect();
        let out = column_medians(&samples);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite("DeepVAR forecast".into()));
        }
        Ok(out)
    }
}

impl Trainable for DeepVar {
    fn values(&self) -> &[f64] {
        self.params.values()
    }

    fn values_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    fn blocks(&self) -> &[Block] {
        self.params.blocks()
    }

    fn sample_loss(
        &self,
        window: &[&[f64]],
        target: &[f64],
        grad: Option<&mut [f64]>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<f64, ForecastError> {
        self.nll(window, target, grad)
    }
}
