//! The synthetic polysemy experiment: a generated dataset split into
//! training and held-out scenes, and one training run per model variant.

use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, GeneratorSpec, Scene};
use crate::error::Result;
use crate::eval::{evaluate, MetricsReport, DEFAULT_KS};
use crate::losses::LossConfig;
use crate::model::{ModelConfig, UpdaterKind};
use crate::train::{train, Checkpoint, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolysemySetup {
    pub seed: u64,
    pub num_predicates: usize,
    pub confusable_pairs: usize,
    pub noise_sigma: f64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub d_word: usize,
    pub d_model: usize,
    pub iterations: usize,
    pub lr: f64,
}

impl PolysemySetup {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            num_predicates: 8,
            confusable_pairs: 2,
            noise_sigma: 0.1,
            train_scenes: 1000,
            test_scenes: 200,
            d_word: 16,
            d_model: 32,
            iterations: 2000,
            lr: 0.005,
        }
    }

    pub fn generator(&self) -> GeneratorSpec {
        GeneratorSpec::polysemy(self.num_predicates, self.confusable_pairs, self.noise_sigma, self.seed)
    }

    /// Training and held-out scenes.
    pub fn dataset(&self) -> Result<(Vec<Scene>, Vec<Scene>)> {
        let mut all = generate_dataset(&self.generator(), self.train_scenes + self.test_scenes)?;
        let test = all.split_off(self.train_scenes);
        Ok((all, test))
    }

    pub fn model_config(&self, updater: UpdaterKind, edge_enabled: bool) -> ModelConfig {
        let spec = self.generator();
        ModelConfig {
            predicate_names: spec.predicate_names(),
            category_names: spec.category_names(),
            d_vis: spec.d_vis,
            d_word: self.d_word,
            d_model: self.d_model,
            updater,
            edge_enabled,
            temperature: 0.1,
        }
    }

    pub fn train_config(&self, loss: LossConfig) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            lr: self.lr,
            seed: self.seed,
            loss,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub updater: UpdaterKind,
    pub edge_enabled: bool,
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
}

/// Trains one variant on `train_set` and evaluates it on `test_set`.
pub fn run_variant(
    setup: &PolysemySetup,
    train_set: &[Scene],
    test_set: &[Scene],
    updater: UpdaterKind,
    edge_enabled: bool,
    loss: LossConfig,
) -> Result<VariantResult> {
    let checkpoint = train(
        train_set,
        setup.model_config(updater, edge_enabled),
        &setup.train_config(loss),
    )?;
    let (report, _) = evaluate(&checkpoint.model()?, test_set, &DEFAULT_KS)?;
    Ok(VariantResult {
        updater,
        edge_enabled,
        checkpoint,
        report,
    })
}
