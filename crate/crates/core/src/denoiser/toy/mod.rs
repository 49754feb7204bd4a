//! Desk-scale bidirectional transformer denoiser.
//!
//! Pre-LayerNorm encoder with learned positional embeddings, tanh-GELU MLP
//! (hidden width 4·d) and an untied output head. All parameters live in one
//! flat `f64` buffer described by a [`ParamLayout`], which the optimizer,
//! the finite-difference checker and the checkpoint format share.

mod checkpoint;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{ForwardCache, ToyDenoiser};
pub use train::{
    build_training_example, sample_loss_and_grad, train_toy, write_loss_csv, TrainConfig,
    TrainedToy, TrainingExample,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl ToyDenoiserConfig {
    pub fn new(vocab_size: usize, max_positions: usize) -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            vocab_size,
            max_positions,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.model_dim == 0
            || self.vocab_size == 0
            || self.max_positions == 0
        {
            return Err(Error::Config("toy denoiser sizes must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        4 * self.model_dim
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn for_config(cfg: &ToyDenoiserConfig) -> Self {
        let d = cfg.model_dim;
        let f = cfg.hidden_dim();
        let v = cfg.vocab_size;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            tensors.push(spec);
        };
        add("tok_emb".into(), vec![v, d]);
        add("pos_emb".into(), vec![cfg.max_positions, d]);
        for l in 0..cfg.layers {
            add(format!("l{l}.ln1_g"), vec![d]);
            add(format!("l{l}.ln1_b"), vec![d]);
            for w in ["wq", "wk", "wv", "wo"] {
                add(format!("l{l}.{w}"), vec![d, d]);
                add(format!("l{l}.b{}", &w[1..]), vec![d]);
            }
            add(format!("l{l}.ln2_g"), vec![d]);
            add(format!("l{l}.ln2_b"), vec![d]);
            add(format!("l{l}.w1"), vec![d, f]);
            add(format!("l{l}.b1"), vec![f]);
            add(format!("l{l}.w2"), vec![f, d]);
            add(format!("l{l}.b2"), vec![d]);
        }
        add("lnf_g".into(), vec![d]);
        add("lnf_b".into(), vec![d]);
        add("w_out".into(), vec![d, v]);
        add("b_out".into(), vec![v]);
        Self {
            tensors,
            total: offset,
        }
    }

    pub fn get(&self, name: &str) -> &TensorSpec {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor `{name}`"))
    }
}
