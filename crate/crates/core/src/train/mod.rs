//! Deterministic mini-batch training with momentum SGD.

mod checkpoint;
mod objective;
mod sgd;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::{Error, Result};
use crate::losses::{class_weights, LossBreakdown, LossConfig};
use crate::model::{Model, ModelConfig, ParamSet};

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT};
pub use objective::{batch_gradients, scene_gradients, scene_objective};
pub use sgd::sgd_step;

/// Abort threshold on the batch objective.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Zero disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            loss: LossConfig::default(),
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be ≥ 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be ≥ 0".into()));
        }
        self.loss.validate()
    }
}

/// Label histogram over all candidates.
pub fn label_counts(scenes: &[Scene], num_predicates: usize) -> Vec<usize> {
    let mut counts = vec![0; num_predicates];
    for s in scenes {
        for c in &s.candidates {
            counts[c.label] += 1;
        }
    }
    counts
}

/// Training state; [`Trainer::step`] runs one batch.
pub struct Trainer<'a> {
    pub model: Model,
    pub momentum: ParamSet,
    pub config: TrainConfig,
    pub iteration: usize,
    pub trace: Vec<LossBreakdown>,
    dataset: &'a [Scene],
    weights: Option<Vec<f64>>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, dataset: &'a [Scene], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let r = model.config.num_predicates();
        for s in dataset {
            s.validate(r, Some(model.config.num_categories()), Some(model.config.d_vis))?;
        }
        let weights = if config.loss.reweight {
            Some(class_weights(
                &label_counts(dataset, r),
                config.loss.reweight_beta,
                config.loss.reweight_clip,
            )?)
        } else {
            None
        };
        let momentum = model.params.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ee_d0fb_a7c4);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            model,
            momentum,
            config,
            iteration: 0,
            trace: Vec::new(),
            dataset,
            weights,
            order,
            cursor: 0,
            rng,
        })
    }

    pub fn class_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    fn next_batch(&mut self) -> Vec<&'a Scene> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(&self.dataset[self.order[self.cursor]]);
            self.cursor += 1;
        }
        batch
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        let batch = self.next_batch();
        let (loss, grads) = batch_gradients(&self.model, &batch, &self.config.loss, self.weights.as_deref())?;
        if !loss.total.is_finite() || loss.total > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                iteration: self.iteration,
                total: loss.total,
            });
        }
        let c = &self.config;
        sgd_step(
            &mut self.model.params,
            &grads,
            &mut self.momentum,
            c.lr,
            c.momentum,
            c.weight_decay,
        )?;
        self.iteration += 1;
        self.trace.push(loss);
        if c.log_every > 0 && self.iteration.is_multiple_of(c.log_every) {
            info!(
                "iter {:>6} total {:.5} cls {:.5} sim {:.5} div {:.5} align {:.5}",
                self.iteration, loss.total, loss.cls, loss.reg_sim, loss.reg_div, loss.align
            );
        }
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.model, &self.momentum, &self.config, self.iteration, &self.trace)
    }

    /// Runs the remaining iterations, calling `on_checkpoint` every
    /// `checkpoint_every` iterations.
    pub fn run(&mut self, mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        while self.iteration < self.config.iterations {
            self.step()?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.iteration.is_multiple_of(every) && self.iteration < self.config.iterations {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }
}

/// Initialises a model from `model_config` and the run seed, then trains it.
pub fn train(dataset: &[Scene], model_config: ModelConfig, config: &TrainConfig) -> Result<Checkpoint> {
    let model = Model::init(model_config, config.seed)?;
    train_model(model, dataset, config)
}

pub fn train_model(model: Model, dataset: &[Scene], config: &TrainConfig) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(model, dataset, config.clone())?;
    trainer.run(|_| Ok(()))?;
    Ok(trainer.checkpoint())
}
