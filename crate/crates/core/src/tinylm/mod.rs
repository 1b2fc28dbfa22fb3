//! A small decoder-only transformer classifier.
//!
//! Each block is multi-head causal self-attention followed by a
//! position-wise ReLU feed-forward network, both on the residual stream
//! without normalization, so the FFN output reaches the heads unrescaled. The FFN hidden vector is the
//! intervention point: an [`InterventionPlan`] edits it at every token
//! position, and the edited values are what the activation trace records.
//! Classification reads the final token (a per-task query token) through a
//! linear head per task.
//!
//! Parameters live in one flat `f64` buffer whose values are kept exactly
//! representable as `f32`, so checkpoints are lossless while gradients and
//! finite-difference checks still run in double precision.

mod checkpoint;
mod forward;
mod intervention;
mod linalg;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Task;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{argmax, ForwardOutput};
pub use intervention::{Action, Directive, InterventionPlan};
pub(crate) use intervention::CompiledPlan;
pub use train::{train, train_examples, train_with, Example, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            vocab_size: 0,
            max_seq: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::Config(format!("{name} too large")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq > u16::MAX as usize {
            return Err(Error::Config("max_seq must fit in u16".into()));
        }
        Ok(())
    }

    pub fn total_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    /// Fixed little-endian encoding shared by checkpoints and the config
    /// digest embedded in trace files.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32);
        for v in [
            self.n_layers,
            self.d_model,
            self.d_ff,
            self.n_heads,
            self.vocab_size,
            self.max_seq,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub const ENCODED_LEN: usize = 6 * 4 + 8;

    pub fn from_bytes(b: &[u8]) -> Option<ModelConfig> {
        if b.len() != Self::ENCODED_LEN {
            return None;
        }
        let u = |i: usize| u32::from_le_bytes(b[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        Some(ModelConfig {
            n_layers: u(0),
            d_model: u(1),
            d_ff: u(2),
            n_heads: u(3),
            vocab_size: u(4),
            max_seq: u(5),
            seed: u64::from_le_bytes(b[24..32].try_into().unwrap()),
        })
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Offsets of one block's tensors in the flat parameter buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub w_out: usize,
    pub b_out: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub layers: Vec<LayerOffsets>,
    /// (weight, bias) per task, indexed by [`Task::index`].
    pub heads: [(usize, usize); 2],
    pub total: usize,
}

/// Tensor shapes `(name, rows, cols)` in checkpoint declaration order.
pub(crate) fn tensor_shapes(c: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (d, f) = (c.d_model, c.d_ff);
    let mut shapes = vec![
        ("tok_emb".to_string(), c.vocab_size, d),
        ("pos_emb".to_string(), c.max_seq, d),
    ];
    for l in 0..c.n_layers {
        for (name, r, k) in [
            ("wq", d, d),
            ("wk", d, d),
            ("wv", d, d),
            ("wo", d, d),
            ("w_in", d, f),
            ("b_in", 1, f),
            ("w_out", f, d),
            ("b_out", 1, d),
        ] {
            shapes.push((format!("layers.{l}.{name}"), r, k));
        }
    }
    for task in Task::ALL {
        shapes.push((format!("head.{task}.w"), d, task.num_labels()));
        shapes.push((format!("head.{task}.b"), 1, task.num_labels()));
    }
    shapes
}

impl Layout {
    fn new(c: &ModelConfig) -> Layout {
        let shapes = tensor_shapes(c);
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for (_, r, k) in &shapes {
            offsets.push(total);
            total += r * k;
        }
        let layers = (0..c.n_layers)
            .map(|l| {
                let o = &offsets[2 + l * 8..2 + l * 8 + 8];
                LayerOffsets {
                    wq: o[0],
                    wk: o[1],
                    wv: o[2],
                    wo: o[3],
                    w_in: o[4],
                    b_in: o[5],
                    w_out: o[6],
                    b_out: o[7],
                }
            })
            .collect();
        let h = 2 + c.n_layers * 8;
        Layout {
            tok_emb: offsets[0],
            pos_emb: offsets[1],
            layers,
            heads: [(offsets[h], offsets[h + 1]), (offsets[h + 2], offsets[h + 3])],
            total,
        }
    }
}

/// Model configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[inline]
pub(crate) fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

impl Model {
    /// Seeded initialization: weight matrices uniform in ±1/√fan_in,
    /// embeddings uniform in ±1/√d_model, biases zero.
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::with_capacity(layout.total);
        for (name, rows, cols) in tensor_shapes(&config) {
            let bias = name.ends_with(".b") || name.ends_with("b_in") || name.ends_with("b_out");
            let bound = if bias {
                0.0
            } else if name.ends_with("_emb") {
                1.0 / (config.d_model as f64).sqrt()
            } else {
                1.0 / (rows as f64).sqrt()
            };
            for _ in 0..rows * cols {
                let v = if bound == 0.0 {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                };
                params.push(quantize(v));
            }
        }
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access for tests that hand-set weights. Values are quantized
    /// to `f32` precision on write-back through [`Model::set_param`].
    pub fn set_param(&mut self, index: usize, value: f64) {
        self.params[index] = quantize(value);
    }

    /// Flat index of `(row, col)` within the named tensor.
    pub fn param_index(&self, tensor: &str, row: usize, col: usize) -> Option<usize> {
        let mut offset = 0;
        for (name, r, c) in tensor_shapes(&self.config) {
            if name == tensor {
                return (row < r && col < c).then_some(offset + row * c + col);
            }
            offset += r * c;
        }
        None
    }

    #[cfg(test)]
    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}
