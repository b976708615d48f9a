//! Whitespace-separated word-vector files: a token followed by its floats,
//! one token per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::random_word_vectors;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn parse(text: &str, expected_dim: usize) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("token {token:?}: {e}"),
                })?;
            if values.len() != expected_dim {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("token {token:?} has {} dims, expected {expected_dim}", values.len()),
                });
            }
            table.insert(token.to_string(), values);
        }
        Ok(Self {
            dim: expected_dim,
            table,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, expected_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.table.get(token).map(Vec::as_slice)
    }

    /// The token's vector, or a fallback drawn from `seed` and the token
    /// itself, so the same token always gets the same fallback.
    pub fn lookup_or_fallback(&self, token: &str, seed: u64) -> Vec<f64> {
        if let Some(v) = self.get(token) {
            return v.to_vec();
        }
        warn!("no word vector for {token:?}; using seeded fallback");
        fallback_vector(token, self.dim, seed)
    }

    /// Stacks vectors for `tokens`, with fallbacks for missing ones.
    pub fn matrix_for(&self, tokens: &[String], seed: u64) -> Matrix {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| self.lookup_or_fallback(t, seed)).collect();
        Matrix::from_rows(&rows, self.dim).expect("uniform widths")
    }
}

pub fn fallback_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    random_word_vectors(&mut rng, 1, dim).into_data()
}
