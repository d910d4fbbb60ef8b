//! GPVAR-style forecaster.
//!
//! One LSTM is shared across series and unrolled separately for each of
//! them; its input at every step is the series value concatenated with a
//! learned per-series embedding. From the per-series state `h_i` the model
//! emits a mean `μ_i`, a diagonal variance `d_i = softplus(·) + 1e-6` and,
//! in low-rank mode, a factor row `v_i ∈ ℝ^r`. The next-step vector is
//! jointly Gaussian with covariance `D + V Vᵀ`.
//!
//! The low-rank likelihood and its gradient use the Woodbury identity with
//! the `r × r` capacitance matrix `C = I + Vᵀ D⁻¹ V`, so no `M × M` matrix
//! is ever formed.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::copula::{column_medians, Preprocessor};
use super::deepvar::{softplus, HALF_LN_2PI, SIGMA_FLOOR};
use super::lstm::{sigmoid, LstmStack, LstmTrace};
use super::params::{Block, ParamSet};
use super::train::{self, Trainable};
use super::{ForecastError, ProbConfig, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct GpVar {
    params: ParamSet,
    stack: LstmStack,
    n_series: usize,
    embed_dim: usize,
    rank: usize,
    low_rank: bool,
    subset: Option<usize>,
    embed: usize,
    mu_w: usize,
    mu_b: usize,
    d_w: usize,
    d_b: usize,
    v_w: usize,
    v_b: usize,
    preprocess: Preprocessor,
}

/// Joint predictive distribution `N(μ, diag(d) + V Vᵀ)` in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankGaussian {
    pub mu: Vec<f64>,
    pub d: Vec<f64>,
    /// `M × r`, row-major; empty columns when the model is diagonal.
    pub v: Vec<Vec<f64>>,
}

struct SeriesOutput {
    trace: LstmTrace,
    mu: f64,
    d: f64,
    d_raw: f64,
    v: Vec<f64>,
}

/// Per-series head gradients.
struct HeadGrad {
    mu: f64,
    d: f64,
    v: Vec<f64>,
}

impl GpVar {
    pub fn new<R: Rng>(n_series: usize, cfg: &ProbConfig, rng: &mut R) -> Self {
        let rank = if cfg.low_rank { cfg.rank } else { 0 };
        let mut params = ParamSet::new();
        let embed_dim = cfg.embedding_dim;
        let stack = LstmStack::register(&mut params, "lstm", 1 + embed_dim, &[cfg.hidden, cfg.hidden]);
        let h = stack.output_size();
        let embed = params.push("embedding", n_series, embed_dim);
        let mu_w = params.push("mu.W", 1, h);
        let mu_b = params.push("mu.b", 1, 1);
        let d_w = params.push("d.W", 1, h);
        let d_b = params.push("d.b", 1, 1);
        let v_w = params.push("V.W", rank, h);
        let v_b = params.push("V.b", 1, rank);
        stack.init(params.values_mut(), rng);
        let bound = 1.0 / (h as f64).sqrt();
        params.init_uniform("embedding", 1.0, rng);
        for name in ["mu.W", "mu.b", "d.W", "d.b", "V.W", "V.b"] {
            params.init_uniform(name, bound, rng);
        }
        Self {
            params,
            stack,
            n_series,
            embed_dim,
            rank,
            low_rank: cfg.low_rank,
            subset: cfg.series_subset,
            embed,
            mu_w,
            mu_b,
            d_w,
            d_b,
            v_w,
            v_b,
            preprocess: Preprocessor::identity(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocess
    }

    pub fn is_low_rank(&self) -> bool {
        self.low_rank
    }

    /// Evaluates the diagonal likelihood even for a low-rank model; used to
    /// compare the two paths.
    pub fn with_low_rank(mut self, low_rank: bool) -> Self {
        self.low_rank = low_rank;
        self
    }

    fn run_series(&self, window: &[&[f64]], i: usize) -> Result<SeriesOutput, ForecastError> {
        let p = self.params.values();
        let e = &p[self.embed + i * self.embed_dim..self.embed + (i + 1) * self.embed_dim];
        let inputs: Vec<Vec<f64>> = window
            .iter()
            .map(|row| {
                let mut x = Vec::with_capacity(1 + self.embed_dim);
                x.push(row[i]);
                x.extend_from_slice(e);
                x
            })
            .collect();
        let xs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let trace = self.stack.forward(p, &xs)?;
        let h = trace.last_hidden();
        let dot = |w: usize| p[w..w + h.len()].iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        let mu = p[self.mu_b] + dot(self.mu_w);
        let d_raw = p[self.d_b] + dot(self.d_w);
        let v = (0..self.rank).map(|k| p[self.v_b + k] + dot(self.v_w + k * h.len())).collect();
        Ok(SeriesOutput {
            mu,
            d: softplus(d_raw) + SIGMA_FLOOR,
            d_raw,
            v,
            trace,
        })
    }

    fn check_window(&self, window: &[&[f64]]) -> Result<(), ForecastError> {
        match window.iter().find(|r| r.len() != self.n_series) {
            Some(r) => Err(ForecastError::Shape(format!(
                "input width {} but model has {} series",
                r.len(),
                self.n_series
            ))),
            None => Ok(()),
        }
    }

    /// Predictive distribution for the step after `window` (model space).
    pub fn distribution(&self, window: &[&[f64]]) -> Result<LowRankGaussian, ForecastError> {
        self.check_window(window)?;
        let mut out = LowRankGaussian {
            mu: Vec::with_capacity(self.n_series),
            d: Vec::with_capacity(self.n_series),
            v: Vec::with_capacity(self.n_series),
        };
        for i in 0..self.n_series {
            let s = self.run_series(window, i)?;
            out.mu.push(s.mu);
            out.d.push(s.d);
            out.v.push(if self.low_rank { s.v } else { Vec::new() });
        }
        Ok(out)
    }

    /// Joint negative log-likelihood of `target` divided by the number of
    /// series scored. `series` restricts scoring to a subset (all when `None`).
    pub fn nll(
        &self,
        window: &[&[f64]],
        target: &[f64],
        series: Option<&[usize]>,
        grad: Option<&mut [f64]>,
    ) -> Result<f64, ForecastError> {
        self.check_window(window)?;
        if target.len() != self.n_series {
            return Err(ForecastError::Shape(format!(
                "target width {} but model has {} series",
                target.len(),
                self.n_series
            )));
        }
        let all: Vec<usize>;
        let idx = match series {
            Some(s) => s,
            None => {
                all = (0..self.n_series).collect();
                &all
            }
        };
        let outs = idx
            .iter()
            .map(|&i| self.run_series(window, i))
            .collect::<Result<Vec<_>, _>>()?;
        let e: Vec<f64> = idx.iter().zip(&outs).map(|(&i, o)| target[i] - o.mu).collect();
        let d: Vec<f64> = outs.iter().map(|o| o.d).collect();
        let (loss, head_grads) = if self.low_rank && self.rank > 0 {
            let v: Vec<&[f64]> = outs.iter().map(|o| o.v.as_slice()).collect();
            low_rank_nll(&e, &d, &v, self.rank)?
        } else {
            diagonal_nll(&e, &d)
        };
        let m = idx.len() as f64;
        if let Some(grad) = grad {
            let p = self.params.values();
            for ((&i, o), hg) in idx.iter().zip(&outs).zip(&head_grads) {
                let h = o.trace.last_hidden();
                let hsz = h.len();
                let mut dh = vec![0.0; hsz];
                let d_draw = hg.d * sigmoid(o.d_raw) / m;
                let d_mu = hg.mu / m;
                let mut heads = vec![(self.mu_w, self.mu_b, d_mu), (self.d_w, self.d_b, d_draw)];
                for k in 0..self.rank {
                    heads.push((self.v_w + k * hsz, self.v_b + k, hg.v[k] / m));
                }
                for (w, b, g) in heads {
                    grad[b] += g;
                    for j in 0..hsz {
                        grad[w + j] += g * h[j];
                        dh[j] += g * p[w + j];
                    }
                }
                let dx = self.stack.backward(p, &o.trace, &dh, grad);
                let slot = self.embed + i * self.embed_dim;
                for step in &dx {
                    for k in 0..self.embed_dim {
                        grad[slot + k] += step[1 + k];
                    }
                }
            }
        }
        Ok(loss / m)
    }

    /// Fits the preprocessing on `series` and trains on the transformed data.
    pub fn train(series: &[Vec<f64>], prob: &ProbConfig, cfg: &TrainConfig) -> Result<(Self, TrainReport), ForecastError> {
        let m = series.first().map_or(0, Vec::len);
        prob.validate(m)?;
        let mut rng = train::stream_rng(cfg.seed, train::STREAM_INIT);
        let mut model = Self::new(m, prob, &mut rng);
        model.preprocess = Preprocessor::fit(series, prob.scaling, prob.copula);
        let data = model.preprocess.forward_all(series);
        let report = train::fit(&mut model, &data, cfg)?;
        Ok((model, report))
    }

    /// Median of `mc_samples` joint draws, mapped back to original units.
    pub fn forecast(&self, series: &[Vec<f64>], seq_len: usize, mc_samples: usize, seed: u64) -> Result<Vec<f64>, ForecastError> {
        if series.len() < seq_len || seq_len == 0 {
            return Err(ForecastError::SeriesTooShort {
                need: seq_len.max(1),
                got: series.len(),
            });
        }
        let tail = self.preprocess.forward_all(&series[series.len() - seq_len..]);
        let window: Vec<&[f64]> = tail.iter().map(Vec::as_slice).collect();
        let dist = self.distribution(&window)?;
        let mut rng = train::stream_rng(seed, train::STREAM_FORECAST);
        let samples: Vec<Vec<f64>> = (0..mc_samples.max(1))
            .map(|_| {
                let factor: Vec<f64> = (0..self.rank).map(|_| rng.sample(StandardNormal)).collect();
                let draw: Vec<f64> = (0..self.n_series)
                    .map(|i| {
                        let eps: f64 = rng.sample(StandardNormal);
                        let common: f64 = dist.v[i].iter().zip(&factor).map(|(a, b)| a * b).sum();
                        dist.mu[i] + dist.d[i].sqrt() * eps + common
                    })
                    .collect();
                self.preprocess.inverse(&draw)
            })
            .collect();
        let out = column_medians(&samples);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite("GPVAR forecast".into()));
        }
        Ok(out)
    }
}

fn diagonal_nll(e: &[f64], d: &[f64]) -> (f64, Vec<HeadGrad>) {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(e.len());
    for (&ei, &di) in e.iter().zip(d) {
        loss += 0.5 * (di.ln() + ei * ei / di) + HALF_LN_2PI;
        let alpha = ei / di;
        grads.push(HeadGrad {
            mu: -alpha,
            d: 0.5 * (1.0 / di - alpha * alpha),
            v: Vec::new(),
        });
    }
    (loss, grads)
}

/// `0.5·(log det Σ + eᵀΣ⁻¹e) + M·½ln2π` for `Σ = D + V Vᵀ` via Woodbury.
fn low_rank_nll(e: &[f64], d: &[f64], v: &[&[f64]], r: usize) -> Result<(f64, Vec<HeadGrad>), ForecastError> {
    let m = e.len();
    // D⁻¹V (m × r) and the capacitance C = I + Vᵀ D⁻¹ V.
    let dinv_v = DMatrix::from_fn(m, r, |i, k| v[i][k] / d[i]);
    let vmat = DMatrix::from_fn(m, r, |i, k| v[i][k]);
    let c = DMatrix::identity(r, r) + vmat.transpose() * &dinv_v;
    let chol = c
        .clone()
        .cholesky()
        .ok_or_else(|| ForecastError::NonFinite("capacitance matrix".into()))?;
    let c_inv = chol.inverse();
    let log_det_c: f64 = 2.0 * (0..r).map(|k| chol.l()[(k, k)].ln()).sum::<f64>();
    let dinv_e = nalgebra::DVector::from_fn(m, |i, _| e[i] / d[i]);
    // α = Σ⁻¹ e = D⁻¹e − D⁻¹V C⁻¹ Vᵀ D⁻¹ e.
    let proj = &c_inv * (vmat.transpose() * &dinv_e);
    let alpha = &dinv_e - &dinv_v * &proj;
    let quad: f64 = e.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let log_det: f64 = log_det_c + d.iter().map(|x| x.ln()).sum::<f64>();
    let loss = 0.5 * (log_det + quad) + m as f64 * HALF_LN_2PI;
    // P V = D⁻¹ V C⁻¹; diag(P)_i = 1/d_i − (D⁻¹V C⁻¹ Vᵀ D⁻¹)_ii.
    let pv = &dinv_v * &c_inv;
    let alpha_v = vmat.transpose() * &alpha;
    let grads = (0..m)
        .map(|i| {
            let p_ii = 1.0 / d[i] - (0..r).map(|k| pv[(i, k)] * dinv_v[(i, k)]).sum::<f64>();
            HeadGrad {
                mu: -alpha[i],
                d: 0.5 * (p_ii - alpha[i] * alpha[i]),
                v: (0..r).map(|k| pv[(i, k)] - alpha[i] * alpha_v[k]).collect(),
            }
        })
        .collect();
    Ok((loss, grads))
}

impl Trainable for GpVar {
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
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ForecastError> {
        match self.subset.filter(|&k| k < self.n_series) {
            // Held-out scoring (no gradient) always uses every series.
            Some(k) if grad.is_some() => {
                let mut idx = sample(rng, self.n_series, k).into_vec();
                idx.sort_unstable();
                self.nll(window, target, Some(&idx), grad)
            }
            _ => self.nll(window, target, None, grad),
        }
    }
}
