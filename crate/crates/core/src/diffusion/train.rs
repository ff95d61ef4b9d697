//! Training loop for the toy model.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_to_latent, ContextVars, ToyModel};
use crate::cond::{reference_crop, resize_controls};
use crate::dataset::TrainingPair;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage};
use crate::rng::{self, Rng};
use crate::tensor::{Gradients, Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the reference context by the null embedding.
    pub cfg_dropout: f64,
    /// Steps per smoothed-loss window.
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            learning_rate: 0.02,
            cfg_dropout: 0.1,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid("steps, batch_size and log_every must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) {
            return Err(Error::invalid(format!("cfg dropout {} outside [0, 1]", self.cfg_dropout)));
        }
        Ok(())
    }
}

/// A training pair prepared at model resolution.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub z0: Tensor,
    pub mask: BinaryMask,
    pub sketch: BinaryMask,
    /// The masked region of the target, cropped to its bounding box.
    pub reference: RasterImage,
    pub prompt: String,
}

impl TrainExample {
    pub fn from_pair(pair: &TrainingPair, latent_size: usize) -> Result<Self> {
        let (mask, sketch) = resize_controls(&pair.mask, &pair.sketch, latent_size, latent_size)?;
        Ok(Self {
            z0: image_to_latent(&pair.target, latent_size)?,
            mask,
            sketch,
            reference: reference_crop(&pair.target.to_rgb(), &pair.mask)?,
            prompt: pair.prompt.clone(),
        })
    }
}

/// One draw of the training objective.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub example: usize,
    pub t: usize,
    pub eps: Tensor,
    pub drop_reference: bool,
}

/// Builds the loss graph of one sample.
pub fn sample_loss(model: &ToyModel, examples: &[TrainExample], s: &TrainSample) -> Result<(Graph, f64, Gradients)> {
    let ex = &examples[s.example];
    let mut g = Graph::new();
    let c_ref = if s.drop_reference {
        g.param(&model.store, model.cond.null_ref)
    } else {
        model.cond.encoder.forward(&mut g, &model.store, &ex.reference)?
    };
    let c_t = if model.config.cond.train_text_branch {
        model.cond.text.forward(&mut g, &model.store, &ex.prompt)
    } else {
        None
    };
    let ctx = ContextVars {
        c_ref,
        c_style: None,
        c_t,
    };
    let loss = model.diffusion_loss(&mut g, &ex.z0, &ex.mask, &ex.sketch, ctx, s.t, &s.eps)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss for example {} at timestep {}",
            s.example, s.t
        )));
    }
    let grads = g.backward(loss)?;
    Ok((g, value, grads))
}

/// Clears gradients and accumulates the batch-mean gradient; returns the
/// batch-mean loss. Samples are evaluated in parallel and summed in order.
pub fn accumulate_batch(model: &mut ToyModel, examples: &[TrainExample], batch: &[TrainSample]) -> Result<f64> {
    let results: Vec<Result<(Graph, f64, Gradients)>> =
        batch.par_iter().map(|s| sample_loss(model, examples, s)).collect();
    model.store.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for r in results {
        let (g, loss, grads) = r?;
        model.store.accumulate_grads(&g, &grads, scale);
        total += loss;
    }
    Ok(total * scale)
}

/// Smoothed losses: the mean of each consecutive `log_every` window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub log_every: usize,
    pub losses: Vec<f64>,
    /// `(step, mean loss over the window ending at step)`.
    pub smoothed: Vec<(usize, f64)>,
}

impl LossLog {
    pub fn initial(&self) -> Option<f64> {
        self.smoothed.first().map(|s| s.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.smoothed.last().map(|s| s.1)
    }
}

/// Deterministic sampler of training draws: a fresh seeded permutation per
/// epoch, then uniform timesteps, unit-normal noise and dropout flags.
pub struct Trainer {
    cfg: TrainConfig,
    examples: Vec<TrainExample>,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    steps: usize,
    shape: [usize; 3],
    total_t: usize,
}

impl Trainer {
    pub fn new(model: &ToyModel, pairs: &[TrainingPair], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        let size = model.config.latent_size;
        let examples = pairs.iter().map(|p| TrainExample::from_pair(p, size)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rng: rng::derived(cfg.seed, 0x7a1),
            cfg,
            order: Vec::new(),
            cursor: 0,
            steps: 0,
            shape: [model.config.latent_channels, size, size],
            total_t: model.schedule.steps(),
            examples,
        })
    }

    pub fn examples(&self) -> &[TrainExample] {
        &self.examples
    }

    pub fn steps_done(&self) -> usize {
        self.steps
    }

    fn next_example(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.examples.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn next_batch(&mut self) -> Vec<TrainSample> {
        (0..self.cfg.batch_size)
            .map(|_| {
                let example = self.next_example();
                let t = self.rng.random_range(1..=self.total_t);
                let eps = Tensor::randn(self.shape.to_vec(), 1.0, &mut self.rng);
                let drop_reference = self.rng.random::<f64>() < self.cfg.cfg_dropout;
                TrainSample {
                    example,
                    t,
                    eps,
                    drop_reference,
                }
            })
            .collect()
    }

    /// One SGD step; returns the batch-mean loss.
    pub fn step(&mut self, model: &mut ToyModel) -> Result<f64> {
        let batch = self.next_batch();
        let loss = accumulate_batch(model, &self.examples, &batch)
            .map_err(|e| Error::NonFinite(format!("step {}: {e}", self.steps)))?;
        model.store.sgd_step(self.cfg.learning_rate)?;
        self.steps += 1;
        Ok(loss)
    }
}

/// Trains for `cfg.steps` steps, calling `on_window` after every smoothed
/// window.
pub fn train_toy(
    model: &mut ToyModel,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_window: impl FnMut(usize, f64),
) -> Result<LossLog> {
    let mut trainer = Trainer::new(model, pairs, cfg.clone())?;
    let mut log = LossLog {
        log_every: cfg.log_every,
        ..Default::default()
    };
    for step in 1..=cfg.steps {
        log.losses.push(trainer.step(model)?);
        if step % cfg.log_every == 0 {
            let window = &log.losses[step - cfg.log_every..];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            log.smoothed.push((step, mean));
            on_window(step, mean);
        }
    }
    Ok(log)
}
