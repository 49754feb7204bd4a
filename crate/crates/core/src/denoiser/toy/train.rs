use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ToyDenoiser, ToyDenoiserConfig};
use crate::corpus::ClaimInstance;
use crate::denoiser::log_softmax;
use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Lower bound of the sampled mask rate t.
    pub min_mask_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 3e-3,
            warmup_steps: 40,
            min_mask_rate: 0.05,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0 < self.min_mask_rate && self.min_mask_rate <= 1.0) {
            return Err(Error::Config(format!(
                "min_mask_rate {} outside (0, 1]",
                self.min_mask_rate
            )));
        }
        Ok(())
    }
}

/// A clean sequence and the positions the objective may mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub tokens: Vec<TokenId>,
    pub output_positions: Vec<usize>,
    pub mask_id: TokenId,
}

pub fn build_training_example(
    instance: &ClaimInstance,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
) -> Result<TrainingExample> {
    let mut tokens = instance.prompt_tokens(vocab, layout.prompt_len)?;
    let output = layout.render_output(
        vocab,
        instance.gold_verdict.proxy(vocab),
        &instance.justification_tokens(vocab),
    )?;
    tokens.extend(output);
    Ok(TrainingExample {
        tokens,
        output_positions: layout.output_positions().collect(),
        mask_id: vocab.mask_id,
    })
}

/// Masked-token cross-entropy weighted by `1/(t·n_out)`; gradients are added
/// into `grads`.
pub fn sample_loss_and_grad(
    model: &ToyDenoiser,
    params: &[f64],
    example: &TrainingExample,
    masked: &[usize],
    t: f64,
    grads: Option<&mut [f64]>,
) -> Result<f64> {
    if masked.is_empty() {
        return Ok(0.0);
    }
    let mut input = example.tokens.clone();
    for &p in masked {
        input[p] = example.mask_id;
    }
    let cache = model.forward_with(params, &input)?;
    let logits = model.logits_with(params, &cache, masked);
    let weight = 1.0 / (t * example.output_positions.len() as f64);
    let mut loss = 0.0;
    let mut dlogits = Array2::<f64>::zeros(logits.dim());
    for (i, &p) in masked.iter().enumerate() {
        let lp = log_softmax(logits.row(i).as_slice().expect("contiguous row"));
        let target = example.tokens[p] as usize;
        loss -= lp[target] * weight;
        for (j, d) in dlogits.row_mut(i).iter_mut().enumerate() {
            *d = lp[j].exp() * weight;
        }
        dlogits[[i, target]] -= weight;
    }
    if let Some(g) = grads {
        model.backward_with(params, &cache, masked, &dlogits, g);
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainedToy {
    pub model: ToyDenoiser,
    /// Mean per-sample loss of each epoch.
    pub loss_curve: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grads[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn lr_at(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let progress =
        (step - cfg.warmup_steps) as f64 / (total.saturating_sub(cfg.warmup_steps)).max(1) as f64;
    cfg.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos()))
}

/// Trains a fresh toy denoiser for one layout. Each sample draws a mask rate
/// `t ~ U(min_mask_rate, 1)` and masks each output position with probability
/// `t` (at least one).
pub fn train_toy(
    corpus: &[ClaimInstance],
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    model_cfg: ToyDenoiserConfig,
    cfg: &TrainConfig,
) -> Result<TrainedToy> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if model_cfg.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} differs from vocabulary size {}",
            model_cfg.vocab_size,
            vocab.len()
        )));
    }
    if layout.total_len() > model_cfg.max_positions {
        return Err(Error::SequenceTooLong {
            len: layout.total_len(),
            max: model_cfg.max_positions,
        });
    }
    let examples: Vec<TrainingExample> = corpus
        .iter()
        .map(|inst| build_training_example(inst, vocab, layout))
        .collect::<Result<_>>()?;

    let mut model = ToyDenoiser::new(model_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.param_count());
    let mut grads = vec![0.0; model.param_count()];
    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let ex = &examples[i];
                let t = rng.gen_range(cfg.min_mask_rate..=1.0);
                let mut masked: Vec<usize> = ex
                    .output_positions
                    .iter()
                    .copied()
                    .filter(|_| rng.gen_bool(t))
                    .collect();
                if masked.is_empty() {
                    masked.push(
                        *ex.output_positions
                            .choose(&mut rng)
                            .expect("non-empty output"),
                    );
                }
                batch_loss +=
                    sample_loss_and_grad(&model, &model.params, ex, &masked, t, Some(&mut grads))?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            if norm > cfg.clip_norm {
                let c = cfg.clip_norm / norm;
                grads.iter_mut().for_each(|g| *g *= c);
            }
            let lr = lr_at(cfg, step, total_steps);
            adam.update(&mut model.params, &grads, lr);
            step += 1;
            epoch_loss += batch_loss;
        }
        loss_curve.push(epoch_loss / corpus.len() as f64);
    }
    Ok(TrainedToy { model, loss_curve })
}

pub fn write_loss_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,mean_loss")?;
    for (e, l) in curve.iter().enumerate() {
        writeln!(f, "{},{l}", e + 1)?;
    }
    f.flush()?;
    Ok(())
}
