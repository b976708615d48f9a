//! Synthetic scenes with polysemous predicates.
//!
//! Every scene draws a hidden context. Ambiguous candidates of a
//! confusable pair `(a, b)` share one feature distribution and one
//! category pair under every context, but are labelled `a` in even
//! contexts and `b` in odd ones, so no per-candidate classifier can beat
//! chance on them. Filler candidates carry the context through their
//! features (`μ_r + κ_c + noise`), with Zipf-distributed labels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::{Candidate, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusablePair {
    pub a: usize,
    pub b: usize,
    /// Shared feature mean; drawn from the seed when absent.
    #[serde(default)]
    pub base: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub num_predicates: usize,
    pub num_categories: usize,
    pub d_vis: usize,
    pub confusable_pairs: Vec<ConfusablePair>,
    /// Per-context offsets κ_c; when absent, `num_contexts` vectors of norm
    /// `context_scale` are drawn from the seed.
    #[serde(default)]
    pub context_vectors: Option<Vec<Vec<f64>>>,
    #[serde(default = "two")]
    pub num_contexts: usize,
    #[serde(default = "one")]
    pub context_scale: f64,
    /// Norm of the per-predicate and shared means.
    #[serde(default = "one")]
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub fillers_per_scene: usize,
    /// When set, filler counts are uniform in `[fillers_per_scene, max]`.
    #[serde(default)]
    pub fillers_per_scene_max: Option<usize>,
    pub ambiguous_per_scene: usize,
    pub tail_skew: f64,
    pub seed: u64,
}

fn two() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

impl GeneratorSpec {
    /// The polysemy setting used throughout the tests: `R` predicates,
    /// pairs `(0, 1), (2, 3), …`, two contexts.
    pub fn polysemy(num_predicates: usize, pairs: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            num_predicates,
            num_categories: num_predicates + pairs,
            d_vis: 16,
            confusable_pairs: (0..pairs)
                .map(|k| ConfusablePair {
                    a: 2 * k,
                    b: 2 * k + 1,
                    base: None,
                })
                .collect(),
            context_vectors: None,
            num_contexts: 2,
            context_scale: 1.0,
            mean_scale: 1.0,
            noise_sigma,
            fillers_per_scene: 6,
            fillers_per_scene_max: None,
            ambiguous_per_scene: 2,
            tail_skew: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.num_predicates == 0 || self.d_vis == 0 || self.num_categories == 0 {
            return cfg("predicates, categories and d_vis must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return cfg(format!("noise_sigma must be ≥ 0, got {}", self.noise_sigma));
        }
        if !(self.tail_skew >= 0.0) {
            return cfg(format!("tail_skew must be ≥ 0, got {}", self.tail_skew));
        }
        if self.ambiguous_per_scene > 0 && self.confusable_pairs.is_empty() {
            return cfg("ambiguous candidates requested but no confusable pairs".into());
        }
        let mut seen = vec![false; self.num_predicates];
        for p in &self.confusable_pairs {
            for r in [p.a, p.b] {
                if r >= self.num_predicates {
                    return cfg(format!("confusable predicate {r} out of range"));
                }
                if seen[r] {
                    return cfg(format!("confusable pairs overlap at predicate {r}"));
                }
                seen[r] = true;
            }
            if let Some(base) = &p.base {
                if base.len() != self.d_vis {
                    return cfg(format!("pair base has {} dims, expected {}", base.len(), self.d_vis));
                }
            }
        }
        match &self.context_vectors {
            Some(ctx) => {
                if ctx.len() < 2 {
                    return cfg("at least two contexts are required".into());
                }
                if ctx.iter().any(|k| k.len() != self.d_vis) {
                    return cfg(format!("context vectors must have {} dims", self.d_vis));
                }
            }
            None if self.num_contexts < 2 => return cfg("at least two contexts are required".into()),
            None => {}
        }
        if let Some(max) = self.fillers_per_scene_max {
            if max < self.fillers_per_scene {
                return cfg("fillers_per_scene_max below fillers_per_scene".into());
            }
        }
        if self.num_categories < 1 {
            return cfg("need at least one category".into());
        }
        Ok(())
    }

    pub fn predicate_names(&self) -> Vec<String> {
        (0..self.num_predicates).map(|r| format!("pred{r}")).collect()
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.num_categories).map(|c| format!("cat{c}")).collect()
    }

    /// Zipf probabilities over predicates, predicate 0 most frequent.
    pub fn label_distribution(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.num_predicates)
            .map(|k| (k as f64).powf(-self.tail_skew))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

/// Feature means and category assignments derived from a spec.
#[derive(Debug, Clone)]
pub struct GeneratorLayout {
    pub predicate_means: Vec<Vec<f64>>,
    pub pair_bases: Vec<Vec<f64>>,
    pub contexts: Vec<Vec<f64>>,
    /// Filler category pair per predicate.
    pub predicate_categories: Vec<(usize, usize)>,
    /// Category pair per confusable pair.
    pub pair_categories: Vec<(usize, usize)>,
}

fn scaled(mut v: Vec<f64>, norm: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x *= norm / n;
        }
    }
    v
}

/// Draws `count` directions of norm `norm`; mutually orthogonal while the
/// dimension allows (Gram–Schmidt on Gaussian draws).
fn directions(rng: &mut ChaCha8Rng, count: usize, dim: usize, basis: &mut Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if basis.len() < dim {
                for b in basis.iter() {
                    let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= dot * y;
                    }
                }
                let v = scaled(v, 1.0);
                basis.push(v.clone());
                v
            } else {
                scaled(v, 1.0)
            }
        })
        .collect()
}

impl GeneratorLayout {
    pub fn from_spec(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut basis = Vec::new();
        let predicate_means = directions(rng, spec.num_predicates, spec.d_vis, &mut basis)
            .into_iter()
            .map(|v| scaled(v, spec.mean_scale))
            .collect();
        let drawn_bases = directions(rng, spec.confusable_pairs.len(), spec.d_vis, &mut basis);
        let pair_bases = spec
            .confusable_pairs
            .iter()
            .zip(drawn_bases)
            .map(|(p, drawn)| p.base.clone().unwrap_or_else(|| scaled(drawn, spec.mean_scale)))
            .collect();
        let contexts = match &spec.context_vectors {
            Some(ctx) => ctx.clone(),
            None => directions(rng, spec.num_contexts, spec.d_vis, &mut basis)
                .into_iter()
                .map(|v| scaled(v, spec.context_scale))
                .collect(),
        };
        let c = spec.num_categories;
        let predicate_categories = (0..spec.num_predicates)
            .map(|_| (rng.random_range(0..c), rng.random_range(0..c)))
            .collect();
        let pair_categories = (0..spec.confusable_pairs.len())
            .map(|_| (rng.random_range(0..c), rng.random_range(0..c)))
            .collect();
        Self {
            predicate_means,
            pair_bases,
            contexts,
            predicate_categories,
            pair_categories,
        }
    }
}

/// Generates `n_scenes` scenes; identical specs give identical output.
pub fn generate_dataset(spec: &GeneratorSpec, n_scenes: usize) -> Result<Vec<Scene>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = GeneratorLayout::from_spec(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let labels = WeightedIndex::new(spec.label_distribution()).map_err(|e| Error::Config(e.to_string()))?;
    let d = spec.d_vis;
    let noisy = |rng: &mut ChaCha8Rng, mean: &[f64], offset: Option<&[f64]>| -> Vec<f64> {
        (0..d)
            .map(|k| mean[k] + offset.map_or(0.0, |o| o[k]) + noise.sample(rng))
            .collect()
    };

    let mut scenes = Vec::with_capacity(n_scenes);
    for s in 0..n_scenes {
        let c = rng.random_range(0..layout.contexts.len());
        let kappa = &layout.contexts[c];
        let fillers = match spec.fillers_per_scene_max {
            Some(max) => rng.random_range(spec.fillers_per_scene..=max),
            None => spec.fillers_per_scene,
        };
        let mut candidates = Vec::with_capacity(spec.ambiguous_per_scene + fillers);
        for _ in 0..spec.ambiguous_per_scene {
            let k = rng.random_range(0..spec.confusable_pairs.len());
            let pair = &spec.confusable_pairs[k];
            let base = &layout.pair_bases[k];
            let (sc, oc) = layout.pair_categories[k];
            candidates.push(Candidate {
                subj_cat: sc,
                obj_cat: oc,
                subj_feat: noisy(&mut rng, base, None),
                obj_feat: noisy(&mut rng, base, None),
                label: if c % 2 == 0 { pair.a } else { pair.b },
                ambiguous: true,
            });
        }
        for _ in 0..fillers {
            let r = labels.sample(&mut rng);
            let mean = &layout.predicate_means[r];
            let (sc, oc) = layout.predicate_categories[r];
            candidates.push(Candidate {
                subj_cat: sc,
                obj_cat: oc,
                subj_feat: noisy(&mut rng, mean, Some(kappa)),
                obj_feat: noisy(&mut rng, mean, Some(kappa)),
                label: r,
                ambiguous: false,
            });
        }
        candidates.shuffle(&mut rng);
        scenes.push(Scene {
            scene_id: format!("s{s:06}"),
            context_tag: format!("ctx{c}"),
            gt_count: candidates.len(),
            candidates,
        });
    }
    Ok(scenes)
}
