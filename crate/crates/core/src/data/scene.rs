use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One subject–object candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub subj_cat: usize,
    pub obj_cat: usize,
    pub subj_feat: Vec<f64>,
    pub obj_feat: Vec<f64>,
    pub label: usize,
    pub ambiguous: bool,
}

/// One image's relation candidates. `context_tag` is generator metadata
/// and never reaches the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub context_tag: String,
    pub candidates: Vec<Candidate>,
    pub gt_count: usize,
}

impl Scene {
    /// Candidates with uniform features in [-1, 1) and uniform categories
    /// and labels.
    pub fn random<R: Rng>(rng: &mut R, candidates: usize, predicates: usize, categories: usize, d_vis: usize) -> Scene {
        let cands: Vec<Candidate> = (0..candidates)
            .map(|_| Candidate {
                subj_cat: rng.random_range(0..categories),
                obj_cat: rng.random_range(0..categories),
                subj_feat: (0..d_vis).map(|_| rng.random_range(-1.0..1.0)).collect(),
                obj_feat: (0..d_vis).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: rng.random_range(0..predicates),
                ambiguous: false,
            })
            .collect();
        Scene {
            scene_id: "random".into(),
            context_tag: String::new(),
            gt_count: cands.len(),
            candidates: cands,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    /// Checks the structural invariants against `num_predicates`,
    /// `num_categories` and the visual feature width.
    pub fn validate(&self, num_predicates: usize, num_categories: Option<usize>, d_vis: Option<usize>) -> Result<()> {
        if self.gt_count != self.candidates.len() {
            return Err(Error::Data(format!(
                "scene {}: gt_count {} but {} labelled candidates",
                self.scene_id,
                self.gt_count,
                self.candidates.len()
            )));
        }
        for (j, c) in self.candidates.iter().enumerate() {
            if c.label >= num_predicates {
                return Err(Error::Data(format!(
                    "scene {} candidate {j}: label {} outside [0, {num_predicates})",
                    self.scene_id, c.label
                )));
            }
            if let Some(cats) = num_categories {
                if c.subj_cat >= cats || c.obj_cat >= cats {
                    return Err(Error::Data(format!(
                        "scene {} candidate {j}: category outside [0, {cats})",
                        self.scene_id
                    )));
                }
            }
            if let Some(d) = d_vis {
                if c.subj_feat.len() != d || c.obj_feat.len() != d {
                    return Err(Error::Data(format!(
                        "scene {} candidate {j}: feature width differs from {d}",
                        self.scene_id
                    )));
                }
            }
            if !c.subj_feat.iter().chain(&c.obj_feat).all(|v| v.is_finite()) {
                return Err(Error::Data(format!(
                    "scene {} candidate {j}: non-finite feature",
                    self.scene_id
                )));
            }
        }
        Ok(())
    }

    pub fn subject_features(&self, d_vis: usize) -> Matrix {
        Matrix::from_fn(self.len(), d_vis, |i, j| self.candidates[i].subj_feat[j])
    }

    pub fn object_features(&self, d_vis: usize) -> Matrix {
        Matrix::from_fn(self.len(), d_vis, |i, j| self.candidates[i].obj_feat[j])
    }
}
