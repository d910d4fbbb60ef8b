//! Sliding-window minibatch training shared by all neural forecasters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Adam, Block};
use super::{ForecastError, TrainConfig, TrainReport};

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;
pub(crate) const STREAM_SAMPLE: u64 = 3;
pub(crate) const STREAM_FORECAST: u64 = 4;

/// Independent ChaCha8 stream for a given seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic child seed from a master seed and a run label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A model trainable on (input window, next row) pairs.
pub trait Trainable {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    fn blocks(&self) -> &[Block];
    /// Loss of one pair. With `grad`, the loss gradient is *added* to it.
    fn sample_loss(
        &self,
        window: &[&[f64]],
        target: &[f64],
        grad: Option<&mut [f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ForecastError>;
}

/// Minimizes the mean sample loss with Adam over shuffled minibatches. The
/// last `validation_len` targets are held out and scored after each epoch.
pub fn fit<M: Trainable>(model: &mut M, data: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport, ForecastError> {
    cfg.validate()?;
    let need = cfg.seq_len + cfg.validation_len + 1;
    if data.len() < need {
        return Err(ForecastError::SeriesTooShort { need, got: data.len() });
    }
    let n_windows = data.len() - cfg.seq_len;
    let n_train = n_windows - cfg.validation_len;
    let window = |w: usize| -> Vec<&[f64]> { data[w..w + cfg.seq_len].iter().map(Vec::as_slice).collect() };

    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut sample_rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let mut adam = Adam::new(model.values().len(), cfg.learning_rate);
    let mut grad = vec![0.0; model.values().len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &w in batch {
                total += model.sample_loss(&window(w), &data[w + cfg.seq_len], Some(&mut grad), &mut sample_rng)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(ForecastError::Diverged { epoch });
            }
            adam.step(model.values_mut(), &grad);
        }
        let train_loss = total / n_train as f64;
        if !train_loss.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
        report.train_loss.push(train_loss);
        if cfg.validation_len > 0 {
            let mut val = 0.0;
            for w in n_train..n_windows {
                val += model.sample_loss(&window(w), &data[w + cfg.seq_len], None, &mut sample_rng)?;
            }
            let val = val / cfg.validation_len as f64;
            if !val.is_finite() {
                return Err(ForecastError::Diverged { epoch });
            }
            report.val_loss.push(val);
        }
    }
    Ok(report)
}

/// Central finite differences against the analytic gradient for one sample.
/// Returns, per parameter block, the worst relative error
/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps rounding noise on
/// vanishing gradients from registering as relative error.
pub fn finite_difference_check<M: Trainable>(
    model: &mut M,
    window: &[Vec<f64>],
    target: &[f64],
    step: f64,
) -> Vec<(String, f64)> {
    let seq: Vec<&[f64]> = window.iter().map(Vec::as_slice).collect();
    let mut rng = stream_rng(0, STREAM_SAMPLE);
    let mut analytic = vec![0.0; model.values().len()];
    model
        .sample_loss(&seq, target, Some(&mut analytic), &mut rng)
        .expect("analytic loss");
    let blocks: Vec<Block> = model.blocks().to_vec();
    let mut out = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut worst: f64 = 0.0;
        for k in block.range() {
            let orig = model.values()[k];
            model.values_mut()[k] = orig + step;
            let up = model.sample_loss(&seq, target, None, &mut rng).expect("loss");
            model.values_mut()[k] = orig - step;
            let down = model.sample_loss(&seq, target, None, &mut rng).expect("loss");
            model.values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((block.name.clone(), worst));
    }
    out
}
