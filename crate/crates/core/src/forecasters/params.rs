//! Flat parameter storage with named blocks, plus the Adam optimizer.
//!
//! Every network keeps all trainable values in one `Vec<f64>`; layers hold
//! offsets into it. Gradients share the same layout, which keeps the
//! optimizer, finite-difference checks and serialization layout-agnostic.

use std::io::Write;

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    blocks: Vec<Block>,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialized `rows × cols` block (row-major) and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.values.len();
        self.blocks.push(Block {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        self.values.resize(offset + rows * cols, 0.0);
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.block(name).map(|b| &self.values[b.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.block(name)?.range();
        Some(&mut self.values[range])
    }

    /// Fills block `name` uniformly in `±bound`.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, bound: f64, rng: &mut R) {
        if let Some(slot) = self.get_mut(name) {
            for v in slot {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `name,index,value` rows, one per scalar.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "index", "value"]).map_err(std::io::Error::other)?;
        for b in &self.blocks {
            for (k, v) in self.values[b.range()].iter().enumerate() {
                w.write_record([b.name.as_str(), &k.to_string(), &v.to_string()])
                    .map_err(std::io::Error::other)?;
            }
        }
        w.flush()
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
