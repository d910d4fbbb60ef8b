//! Stacked LSTM with hand-written backpropagation through time.
//!
//! Cell equations (per layer, per step):
//!
//! ```text
//! f = σ(W_f h₋ + U_f x + b_f)      forget gate
//! i = σ(W_i h₋ + U_i x + b_i)      input gate
//! g = tanh(W_g h₋ + U_g x + b_g)   candidate
//! o = σ(W_o h₋ + U_o x + b_o)      output gate
//! c = f∘c₋ + i∘g
//! h = o∘tanh(c)
//! ```
//!
//! `W_·` blocks are `hidden × hidden`, `U_·` blocks `hidden × input`, both
//! row-major with one row per unit. `h₀ = c₀ = 0`.

use rand::Rng;

use super::params::ParamSet;
use super::{ForecastError, TrainConfig};

const GATES: [&str; 4] = ["f", "i", "g", "o"];

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    input: usize,
    hidden: usize,
    w: [usize; 4],
    u: [usize; 4],
    b: [usize; 4],
}

/// Offsets of a stacked LSTM inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    input: usize,
    layers: Vec<LayerLayout>,
}

#[derive(Debug, Clone, Default)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Activations recorded by [`LstmStack::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    layers: Vec<Vec<StepCache>>,
}

impl LstmTrace {
    /// Top-layer hidden state after the last step.
    pub fn last_hidden(&self) -> &[f64] {
        &self.layers.last().and_then(|l| l.last()).expect("non-empty trace").h
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LstmStack {
    /// Registers blocks `"{prefix}{l}.W_f"`, `"{prefix}{l}.U_f"`, `"{prefix}{l}.b_f"`, ... for each layer.
    pub fn register(params: &mut ParamSet, prefix: &str, input: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for (l, &h) in hidden.iter().enumerate() {
            let mut w = [0; 4];
            let mut u = [0; 4];
            let mut b = [0; 4];
            for (q, gate) in GATES.iter().enumerate() {
                w[q] = params.push(format!("{prefix}{l}.W_{gate}"), h, h);
                u[q] = params.push(format!("{prefix}{l}.U_{gate}"), h, fan_in);
                b[q] = params.push(format!("{prefix}{l}.b_{gate}"), 1, h);
            }
            layers.push(LayerLayout {
                input: fan_in,
                hidden: h,
                w,
                u,
                b,
            });
            fan_in = h;
        }
        Self { input, layers }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.hidden)
    }

    /// Uniform `±1/√fan_in` initialization: `W` and biases use the layer
    /// width, `U` uses the layer input width.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        for layer in &self.layers {
            let bh = 1.0 / (layer.hidden as f64).sqrt();
            let bx = 1.0 / (layer.input as f64).sqrt();
            for q in 0..4 {
                fill_uniform(&mut params[layer.w[q]..layer.w[q] + layer.hidden * layer.hidden], bh, rng);
                fill_uniform(&mut params[layer.u[q]..layer.u[q] + layer.hidden * layer.input], bx, rng);
                fill_uniform(&mut params[layer.b[q]..layer.b[q] + layer.hidden], bh, rng);
            }
        }
    }

    pub fn forward(&self, p: &[f64], xs: &[&[f64]]) -> Result<LstmTrace, ForecastError> {
        if xs.is_empty() {
            return Err(ForecastError::Shape("empty input sequence".into()));
        }
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
        for x in xs {
            if x.len() != self.input {
                return Err(ForecastError::Shape(format!(
                    "input width {} but network expects {}",
                    x.len(),
                    self.input
                )));
            }
            inputs.push(x.to_vec());
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let hsz = layer.hidden;
            let mut h = vec![0.0; hsz];
            let mut c = vec![0.0; hsz];
            let mut steps = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let mut pre = [vec![0.0; hsz], vec![0.0; hsz], vec![0.0; hsz], vec![0.0; hsz]];
                for (q, a) in pre.iter_mut().enumerate() {
                    let w = &p[layer.w[q]..layer.w[q] + hsz * hsz];
                    let u = &p[layer.u[q]..layer.u[q] + hsz * layer.input];
                    let b = &p[layer.b[q]..layer.b[q] + hsz];
                    for k in 0..hsz {
                        let mut acc = b[k];
                        let wr = &w[k * hsz..(k + 1) * hsz];
                        for j in 0..hsz {
                            acc += wr[j] * h[j];
                        }
                        let ur = &u[k * layer.input..(k + 1) * layer.input];
                        for j in 0..layer.input {
                            acc += ur[j] * x[j];
                        }
                        a[k] = acc;
                    }
                }
                let [af, ai, ag, ao] = pre;
                let f: Vec<f64> = af.into_iter().map(sigmoid).collect();
                let i: Vec<f64> = ai.into_iter().map(sigmoid).collect();
                let g: Vec<f64> = ag.into_iter().map(f64::tanh).collect();
                let o: Vec<f64> = ao.into_iter().map(sigmoid).collect();
                let c_new: Vec<f64> = (0..hsz).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
                let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
                let h_new: Vec<f64> = (0..hsz).map(|k| o[k] * tanh_c[k]).collect();
                if h_new.iter().chain(&c_new).any(|v| !v.is_finite()) {
                    return Err(ForecastError::NonFinite("LSTM state".into()));
                }
                steps.push(StepCache {
                    x: x.clone(),
                    h_prev: std::mem::replace(&mut h, h_new.clone()),
                    c_prev: std::mem::replace(&mut c, c_new),
                    f,
                    i,
                    g,
                    o,
                    tanh_c,
                    h: h_new,
                });
            }
            inputs = steps.iter().map(|s| s.h.clone()).collect();
            layers.push(steps);
        }
        Ok(LstmTrace { layers })
    }

    /// Backpropagates a gradient on the final top-layer hidden state.
    /// Parameter gradients are accumulated into `grad`; the returned vectors
    /// are the gradients with respect to each step's input.
    pub fn backward(&self, p: &[f64], trace: &LstmTrace, dh_last: &[f64], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let n_steps = trace.layers[0].len();
        // Gradient arriving at each step's hidden output from the layer above.
        let mut dh_from_above: Vec<Vec<f64>> = vec![Vec::new(); n_steps];
        dh_from_above[n_steps - 1] = dh_last.to_vec();
        for (layer, steps) in self.layers.iter().zip(&trace.layers).rev() {
            let hsz = layer.hidden;
            let isz = layer.input;
            let mut dh_next = vec![0.0; hsz];
            let mut dc_next = vec![0.0; hsz];
            let mut dx_all = vec![vec![0.0; isz]; n_steps];
            for t in (0..n_steps).rev() {
                let s = &steps[t];
                let mut dh = dh_next.clone();
                if let Some(above) = dh_from_above.get(t).filter(|v| !v.is_empty()) {
                    for k in 0..hsz {
                        dh[k] += above[k];
                    }
                }
                let mut da = [vec![0.0; hsz], vec![0.0; hsz], vec![0.0; hsz], vec![0.0; hsz]];
                let mut dc_prev = vec![0.0; hsz];
                for k in 0..hsz {
                    let d_o = dh[k] * s.tanh_c[k];
                    let dc = dc_next[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                    let d_f = dc * s.c_prev[k];
                    let d_i = dc * s.g[k];
                    let d_g = dc * s.i[k];
                    dc_prev[k] = dc * s.f[k];
                    da[0][k] = d_f * s.f[k] * (1.0 - s.f[k]);
                    da[1][k] = d_i * s.i[k] * (1.0 - s.i[k]);
                    da[2][k] = d_g * (1.0 - s.g[k] * s.g[k]);
                    da[3][k] = d_o * s.o[k] * (1.0 - s.o[k]);
                }
                let mut dh_prev = vec![0.0; hsz];
                let dx = &mut dx_all[t];
                for (q, a) in da.iter().enumerate() {
                    let (wo, uo, bo) = (layer.w[q], layer.u[q], layer.b[q]);
                    for k in 0..hsz {
                        let ak = a[k];
                        if ak == 0.0 {
                            continue;
                        }
                        grad[bo + k] += ak;
                        let wrow = wo + k * hsz;
                        for j in 0..hsz {
                            grad[wrow + j] += ak * s.h_prev[j];
                            dh_prev[j] += p[wrow + j] * ak;
                        }
                        let urow = uo + k * isz;
                        for j in 0..isz {
                            grad[urow + j] += ak * s.x[j];
                            dx[j] += p[urow + j] * ak;
                        }
                    }
                }
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            dh_from_above = dx_all;
        }
        dh_from_above
    }
}

fn fill_uniform<R: Rng>(slot: &mut [f64], bound: f64, rng: &mut R) {
    for v in slot {
        *v = rng.random_range(-bound..=bound);
    }
}

/// LSTM trunk plus a linear output map `ŷ = V·h_T + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    params: ParamSet,
    stack: LstmStack,
    head_w: usize,
    head_b: usize,
    n_out: usize,
}

impl LstmParams {
    /// All-zero parameters.
    pub fn zeros(n_in: usize, hidden: &[usize], n_out: usize) -> Self {
        let mut params = ParamSet::new();
        let stack = LstmStack::register(&mut params, "lstm", n_in, hidden);
        let top = stack.output_size();
        let head_w = params.push("V", n_out, top);
        let head_b = params.push("V_bias", 1, n_out);
        Self {
            params,
            stack,
            head_w,
            head_b,
            n_out,
        }
    }

    pub fn init<R: Rng>(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(n_in, hidden, n_out);
        net.stack.init(net.params.values_mut(), rng);
        let bound = 1.0 / (net.stack.output_size() as f64).sqrt();
        net.params.init_uniform("V", bound, rng);
        net.params.init_uniform("V_bias", bound, rng);
        net
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.stack.input_size()
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let p = self.params.values();
        let hsz = h.len();
        (0..self.n_out)
            .map(|m| {
                let row = &p[self.head_w + m * hsz..self.head_w + (m + 1) * hsz];
                p[self.head_b + m] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, seq: &[&[f64]]) -> Result<Vec<f64>, ForecastError> {
        let trace = self.stack.forward(self.params.values(), seq)?;
        let y = self.head(trace.last_hidden());
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite("LSTM output".into()));
        }
        Ok(y)
    }

    /// Mean squared error of the one-step prediction; adds its gradient to
    /// `grad` when supplied.
    pub fn loss(&self, seq: &[&[f64]], target: &[f64], grad: Option<&mut [f64]>) -> Result<f64, ForecastError> {
        if target.len() != self.n_out {
            return Err(ForecastError::Shape(format!(
                "target width {} but network emits {}",
                target.len(),
                self.n_out
            )));
        }
        let p = self.params.values();
        let trace = self.stack.forward(p, seq)?;
        let h = trace.last_hidden();
        let y = self.head(h);
        let m = self.n_out as f64;
        let loss = y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m;
        if let Some(grad) = grad {
            let hsz = h.len();
            let mut dh = vec![0.0; hsz];
            for k in 0..self.n_out {
                let dy = 2.0 * (y[k] - target[k]) / m;
                grad[self.head_b + k] += dy;
                let row = self.head_w + k * hsz;
                for j in 0..hsz {
                    grad[row + j] += dy * h[j];
                    dh[j] += dy * p[row + j];
                }
            }
            self.stack.backward(p, &trace, &dh, grad);
        }
        Ok(loss)
    }
}

/// One-step-ahead output for the given input sequence.
pub fn lstm_forward(params: &LstmParams, sequence: &[Vec<f64>]) -> Result<Vec<f64>, ForecastError> {
    let seq: Vec<&[f64]> = sequence.iter().map(Vec::as_slice).collect();
    params.forward(&seq)
}

impl super::train::Trainable for LstmParams {
    fn values(&self) -> &[f64] {
        self.params.values()
    }

    fn values_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    fn blocks(&self) -> &[super::params::Block] {
        self.params.blocks()
    }

    fn sample_loss(
        &self,
        window: &[&[f64]],
        target: &[f64],
        grad: Option<&mut [f64]>,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<f64, ForecastError> {
        self.loss(window, target, grad)
    }
}

/// Trains a fresh network on `series` (rows = time, columns = series) to
/// minimize the one-step MSE.
pub fn lstm_train(
    series: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(LstmParams, super::TrainReport), ForecastError> {
    cfg.validate()?;
    let m = series.first().map_or(0, Vec::len);
    let mut rng = super::train::stream_rng(cfg.seed, super::train::STREAM_INIT);
    let mut net = LstmParams::init(m, &cfg.hidden, m, &mut rng);
    let report = super::train::fit(&mut net, series, cfg)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecasters::train::{finite_difference_check, stream_rng};

    #[test]
    fn zero_weights_output_the_bias() {
        let mut net = LstmParams::zeros(3, &[4], 2);
        net.params_mut().get_mut("V_bias").unwrap().copy_from_slice(&[0.7, -1.5]);
        let seq = vec![vec![1.0, 2.0, 3.0]; 5];
        assert_eq!(lstm_forward(&net, &seq).unwrap(), vec![0.7, -1.5]);
    }

    #[test]
    fn scalar_trace_matches_closed_form() {
        let mut net = LstmParams::zeros(1, &[1], 1);
        let set = |net: &mut LstmParams, name: &str, v: f64| net.params_mut().get_mut(name).unwrap()[0] = v;
        let (ui, ug, uo) = (-0.4, 0.9, 0.2);
        let (bi, bg, bo) = (0.2, -0.3, 0.05);
        for (n, v) in [("U_f", 0.3), ("U_i", ui), ("U_g", ug), ("U_o", uo)] {
            set(&mut net, &format!("lstm0.{n}"), v);
        }
        for (n, v) in [("b_f", 0.1), ("b_i", bi), ("b_g", bg), ("b_o", bo)] {
            set(&mut net, &format!("lstm0.{n}"), v);
        }
        set(&mut net, "V", 1.7);
        set(&mut net, "V_bias", 0.25);
        let x = 0.8f64;
        // h_prev = c_prev = 0, so W and the forget gate drop out.
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(ui * x + bi);
        let g = (ug * x + bg).tanh();
        let o = s(uo * x + bo);
        let h = o * (i * g).tanh();
        let expect = 1.7 * h + 0.25;
        let got = lstm_forward(&net, &[vec![x]]).unwrap()[0];
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn doubling_v_doubles_output_minus_bias() {
        let mut rng = stream_rng(3, 0);
        let mut net = LstmParams::init(2, &[3], 2, &mut rng);
        let seq = vec![vec![0.5, -0.2], vec![0.1, 0.3]];
        let before = lstm_forward(&net, &seq).unwrap();
        let bias = net.params().get("V_bias").unwrap().to_vec();
        for v in net.params_mut().get_mut("V").unwrap() {
            *v *= 2.0;
        }
        let after = lstm_forward(&net, &seq).unwrap();
        for k in 0..2 {
            assert!(((after[k] - bias[k]) - 2.0 * (before[k] - bias[k])).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let net = LstmParams::zeros(2, &[2], 2);
        assert!(matches!(lstm_forward(&net, &[vec![1.0]]), Err(ForecastError::Shape(_))));
        assert!(matches!(lstm_forward(&net, &[]), Err(ForecastError::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences_two_layers() {
        let mut rng = stream_rng(9, 0);
        let mut net = LstmParams::init(2, &[3, 2], 2, &mut rng);
        let seq: Vec<Vec<f64>> = (0..4).map(|t| vec![(t as f64 * 0.7).sin(), (t as f64 * 0.3).cos()]).collect();
        let target = vec![0.4, -0.9];
        let worst = finite_difference_check(&mut net, &seq, &target, 1e-5);
        for (name, err) in worst {
            assert!(err <= 1e-4, "{name}: {err}");
        }
    }
}
