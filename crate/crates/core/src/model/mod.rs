//! The prototype-feedback model: static prototypes, relation fusion,
//! context-conditioned prototype adaptation, relation recalibration and
//! the prototype-anchored classifier.

mod forward;
pub mod ops;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::gru::GRU_PARAM_NAMES;
use crate::numerics::Matrix;

pub use forward::{bind_params, build_graph, forward_image, GraphOutputs, ImageOutput, ParamVars};
pub use params::{Param, ParamSet};

/// How prototypes absorb the per-image context signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdaterKind {
    Identity,
    Concat,
    Gru,
    Residual,
    PlainAdd,
    Ema,
}

impl UpdaterKind {
    pub const ALL: [UpdaterKind; 6] = [
        UpdaterKind::Identity,
        UpdaterKind::Concat,
        UpdaterKind::Gru,
        UpdaterKind::Residual,
        UpdaterKind::PlainAdd,
        UpdaterKind::Ema,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdaterKind::Identity => "identity",
            UpdaterKind::Concat => "concat",
            UpdaterKind::Gru => "gru",
            UpdaterKind::Residual => "residual",
            UpdaterKind::PlainAdd => "plain_add",
            UpdaterKind::Ema => "ema",
        }
    }
}

impl fmt::Display for UpdaterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdaterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UpdaterKind::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown updater variant {s:?}")))
    }
}

/// Architecture of a model instance. Its digest guards checkpoint loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub predicate_names: Vec<String>,
    pub category_names: Vec<String>,
    pub d_vis: usize,
    pub d_word: usize,
    pub d_model: usize,
    pub updater: UpdaterKind,
    /// Relation recalibration from adapted prototypes.
    pub edge_enabled: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    0.1
}

impl ModelConfig {
    pub fn num_predicates(&self) -> usize {
        self.predicate_names.len()
    }

    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.predicate_names.is_empty() {
            return Err(Error::Config("prototype set may never be empty".into()));
        }
        if self.category_names.is_empty() {
            return Err(Error::Config("at least one object category is required".into()));
        }
        if self.d_vis == 0 || self.d_word == 0 || self.d_model == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A model instance: configuration, learnable parameters and the frozen
/// word embeddings for predicates and object categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// `R × d_word`
    pub predicate_words: Matrix,
    /// `C × d_word`
    pub category_words: Matrix,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Word vectors drawn from N(0, 1/√d_word).
pub fn random_word_vectors(rng: &mut ChaCha8Rng, rows: usize, d_word: usize) -> Matrix {
    let normal = Normal::new(0.0, 1.0 / (d_word as f64).sqrt()).expect("valid std");
    Matrix::from_fn(rows, d_word, |_, _| normal.sample(rng))
}

impl Model {
    /// Fresh model with random word embeddings, all drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let predicate_words = random_word_vectors(&mut rng, config.num_predicates(), config.d_word);
        let category_words = random_word_vectors(&mut rng, config.num_categories(), config.d_word);
        Self::init_with_words(config, predicate_words, category_words, &mut rng)
    }

    /// Fresh model around externally supplied word embeddings.
    pub fn init_with_words(
        config: ModelConfig,
        predicate_words: Matrix,
        category_words: Matrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (r, c, dw) = (config.num_predicates(), config.num_categories(), config.d_word);
        if predicate_words.shape() != (r, dw) || category_words.shape() != (c, dw) {
            return Err(Error::Dimension {
                op: "Model::init_with_words",
                lhs: predicate_words.shape(),
                rhs: category_words.shape(),
            });
        }
        let params = init_params(&config, rng);
        Ok(Self {
            config,
            params,
            predicate_words,
            category_words,
        })
    }
}

fn init_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamSet {
    let d = cfg.d_model;
    let mut p = ParamSet::new();
    p.insert("proto.proj", xavier(rng, d, cfg.d_word), true);

    p.insert("fuse.w_x", xavier(rng, d, cfg.d_vis), true);
    p.insert("fuse.w_t", xavier(rng, d, cfg.d_word), true);
    p.insert("fuse.w1", xavier(rng, d, 2 * d), true);
    p.insert("fuse.b1", Matrix::zeros(1, d), true);
    p.insert("fuse.w2", xavier(rng, d, d), true);
    p.insert("fuse.b2", Matrix::zeros(1, d), true);

    if cfg.updater != UpdaterKind::Identity {
        for name in ["ctx.w_q", "ctx.w_k", "ctx.w_v"] {
            p.insert(name, xavier(rng, d, d), true);
        }
    }
    match cfg.updater {
        UpdaterKind::Identity | UpdaterKind::PlainAdd => {}
        UpdaterKind::Gru => {
            p.insert("upd.ln.gain", Matrix::filled(1, d, 1.0), false);
            p.insert("upd.ln.bias", Matrix::zeros(1, d), false);
            let bound = 1.0 / (d as f64).sqrt();
            for name in GRU_PARAM_NAMES {
                let rows_cols = if name.starts_with('w') { (d, d) } else { (1, d) };
                p.insert(
                    &format!("upd.gru.{name}"),
                    uniform(rng, rows_cols.0, rows_cols.1, bound),
                    true,
                );
            }
        }
        UpdaterKind::Concat => {
            p.insert("upd.w", xavier(rng, d, 2 * d), true);
            p.insert("upd.b", Matrix::zeros(1, d), true);
        }
        UpdaterKind::Residual => p.insert("upd.w_res", xavier(rng, d, d), true),
        UpdaterKind::Ema => p.insert("upd.alpha", Matrix::scalar(0.0), false),
    }

    if cfg.edge_enabled {
        for name in ["fb.w_q", "fb.w_k", "fb.w_v"] {
            p.insert(name, xavier(rng, d, d), true);
        }
        p.insert("recal.ln.gain", Matrix::filled(1, d, 1.0), false);
        p.insert("recal.ln.bias", Matrix::zeros(1, d), false);
        p.insert("recal.w", xavier(rng, d, 2 * d), true);
        p.insert("recal.b", Matrix::zeros(1, d), true);
    }
    p
}
