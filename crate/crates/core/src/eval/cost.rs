use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::Result;
use crate::model::{forward_image, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCount {
    pub candidates: usize,
    /// Multiply-adds spent in prototype adaptation and feedback recalibration.
    pub multiply_adds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub counts: Vec<OpCount>,
    /// Count not depending on N, from the counts at N = 1 and N = 2.
    pub constant: i64,
}

impl CostReport {
    /// `(count(N) − constant)` for each measured N.
    pub fn scaling_part(&self) -> Vec<(usize, f64)> {
        self.counts
            .iter()
            .map(|c| (c.candidates, c.multiply_adds as f64 - self.constant as f64))
            .collect()
    }

    /// `(N, ratio)` for every measured pair `N`, `2N`, of the N-dependent part.
    pub fn doubling_ratios(&self) -> Vec<(usize, f64)> {
        let parts = self.scaling_part();
        parts
            .iter()
            .filter_map(|&(n, v)| parts.iter().find(|&&(m, _)| m == 2 * n).map(|&(_, w)| (n, w / v)))
            .collect()
    }
}

/// Measures the feedback mechanism's multiply-adds on random scenes of each
/// size in `sizes`.
pub fn count_ops(model: &Model, sizes: &[usize], seed: u64) -> Result<CostReport> {
    let cfg = &model.config;
    let measure = |n: usize| -> Result<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let scene = Scene::random(&mut rng, n, cfg.num_predicates(), cfg.num_categories(), cfg.d_vis);
        Ok(forward_image(model, &scene)?.feedback_multiply_adds)
    };
    let one = measure(1)? as i64;
    let two = measure(2)? as i64;
    let counts = sizes
        .iter()
        .map(|&n| {
            Ok(OpCount {
                candidates: n,
                multiply_adds: measure(n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostReport {
        counts,
        constant: 2 * one - two,
    })
}
