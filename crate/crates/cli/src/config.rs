//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use protofeedback::data::GeneratorSpec;
use protofeedback::model::{ModelConfig, UpdaterKind};
use protofeedback::train::TrainConfig;
use protofeedback::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_train_scenes")]
    pub train_scenes: usize,
    #[serde(default = "default_test_scenes")]
    pub test_scenes: usize,
    /// Optional word-vector file; tokens are the predicate and category names.
    #[serde(default)]
    pub word_vectors: Option<PathBuf>,
    /// Overrides the generator's names.
    #[serde(default)]
    pub predicates: Option<Vec<String>>,
    #[serde(default)]
    pub categories: Option<Vec<String>>,
}

fn default_train_scenes() -> usize {
    1000
}

fn default_test_scenes() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_word: usize,
    pub d_model: usize,
    pub updater: UpdaterKind,
    pub edge_enabled: bool,
    pub temperature: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_word: 16,
            d_model: 32,
            updater: UpdaterKind::Gru,
            edge_enabled: true,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// `[ground truth, confused]` pairs for `eval --compare`; the most
    /// frequent confusions of the reference model when absent.
    pub confusion_pairs: Option<Vec<[usize; 2]>>,
    pub confusion_limit: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: protofeedback::eval::DEFAULT_KS.to_vec(),
            confusion_pairs: None,
            confusion_limit: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorSpec,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    /// Reads `path`, applies overrides in order and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        self.model_config().validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config(
                "eval.ks must be a nonempty list of positive cut-offs".into(),
            ));
        }
        let r = self.model_config().num_predicates();
        if let Some(pairs) = &self.eval.confusion_pairs {
            if pairs.iter().flatten().any(|&p| p >= r) {
                return Err(Error::Config(format!("confusion pair outside [0, {r})")));
            }
        }
        if let Some(p) = &self.data.predicates {
            if p.len() != self.generator.num_predicates {
                return Err(Error::Config(
                    "data.predicates must name every generator predicate".into(),
                ));
            }
        }
        if let Some(c) = &self.data.categories {
            if c.len() != self.generator.num_categories {
                return Err(Error::Config(
                    "data.categories must name every generator category".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model_config_for(self.model.updater, self.model.edge_enabled)
    }

    pub fn model_config_for(&self, updater: UpdaterKind, edge_enabled: bool) -> ModelConfig {
        ModelConfig {
            predicate_names: self
                .data
                .predicates
                .clone()
                .unwrap_or_else(|| self.generator.predicate_names()),
            category_names: self
                .data
                .categories
                .clone()
                .unwrap_or_else(|| self.generator.category_names()),
            d_vis: self.generator.d_vis,
            d_word: self.model.d_word,
            d_model: self.model.d_model,
            updater,
            edge_enabled,
            temperature: self.model.temperature,
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it is not one.
fn apply_override(table: &mut Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {item:?} has an empty key")));
    }
    let value = parse_literal(raw.trim());
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {item:?}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
