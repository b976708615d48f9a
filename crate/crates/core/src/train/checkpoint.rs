//! Checkpoint files: one JSON document of named arrays with shapes, tagged
//! with a format version and the model-config digest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::{Model, ModelConfig, ParamSet};
use crate::numerics::Matrix;

pub const CHECKPOINT_FORMAT: &str = "protofeedback-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub decay: bool,
    pub data: Vec<f64>,
}

fn to_arrays(set: &ParamSet) -> Vec<NamedArray> {
    set.iter()
        .map(|p| NamedArray {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            decay: p.decay,
            data: p.value.data().to_vec(),
        })
        .collect()
}

fn from_arrays(arrays: &[NamedArray]) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for a in arrays {
        let m = Matrix::new(a.rows, a.cols, a.data.clone()).map_err(|_| Error::Parse {
            line: 0,
            msg: format!("array {} has the wrong length", a.name),
        })?;
        if set.index_of(&a.name).is_some() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("duplicate array {}", a.name),
            });
        }
        set.insert(&a.name, m, a.decay);
    }
    Ok(set)
}

/// Parameters, optimiser state and provenance of a training run. Adapted
/// prototypes are per-image and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config_digest: String,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub iteration: usize,
    pub predicate_words: NamedArray,
    pub category_words: NamedArray,
    pub params: Vec<NamedArray>,
    pub momentum: Vec<NamedArray>,
    pub loss_trace: Vec<LossBreakdown>,
}

fn matrix_array(name: &str, m: &Matrix) -> NamedArray {
    NamedArray {
        name: name.to_string(),
        rows: m.rows(),
        cols: m.cols(),
        decay: false,
        data: m.data().to_vec(),
    }
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        momentum: &ParamSet,
        train_config: &TrainConfig,
        iteration: usize,
        loss_trace: &[LossBreakdown],
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config_digest: model.config.digest(),
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            seed: train_config.seed,
            iteration,
            predicate_words: matrix_array("predicate_words", &model.predicate_words),
            category_words: matrix_array("category_words", &model.category_words),
            params: to_arrays(&model.params),
            momentum: to_arrays(momentum),
            loss_trace: loss_trace.to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    /// Parses and checks format tag, embedded digest and array layout.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Incompatible(format!(
                "format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        if ck.model_config.digest() != ck.config_digest {
            return Err(Error::Incompatible(
                "config digest does not match embedded config".into(),
            ));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Loads and requires the checkpoint to match `expected`.
    pub fn load_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.ensure_compatible(expected)?;
        Ok(ck)
    }

    pub fn ensure_compatible(&self, expected: &ModelConfig) -> Result<()> {
        if self.config_digest != expected.digest() {
            return Err(Error::Incompatible(format!(
                "checkpoint digest {} (updater {}, edge {}) does not match config digest {} (updater {}, edge {})",
                &self.config_digest[..12],
                self.model_config.updater,
                self.model_config.edge_enabled,
                &expected.digest()[..12],
                expected.updater,
                expected.edge_enabled
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model> {
        let fresh_layout = crate::model::Model::init(self.model_config.clone(), 0)?;
        let params = from_arrays(&self.params)?;
        if !params.same_layout(&fresh_layout.params) {
            return Err(Error::Incompatible(
                "parameter layout differs from the model config".into(),
            ));
        }
        let words = |a: &NamedArray| {
            Matrix::new(a.rows, a.cols, a.data.clone()).map_err(|_| Error::Parse {
                line: 0,
                msg: format!("array {} has the wrong length", a.name),
            })
        };
        let predicate_words = words(&self.predicate_words)?;
        let category_words = words(&self.category_words)?;
        if predicate_words.shape() != fresh_layout.predicate_words.shape()
            || category_words.shape() != fresh_layout.category_words.shape()
        {
            return Err(Error::Incompatible(
                "word embedding shapes differ from the model config".into(),
            ));
        }
        Ok(Model {
            config: self.model_config.clone(),
            params,
            predicate_words,
            category_words,
        })
    }

    pub fn momentum_buffers(&self) -> Result<ParamSet> {
        from_arrays(&self.momentum)
    }
}
