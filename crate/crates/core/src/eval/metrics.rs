use serde::{Deserialize, Serialize};

use crate::data::DensityBin;
use crate::error::{Error, Result};

/// One scene's ground truth and per-candidate top-1 predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePredictions {
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Ranking score of each candidate's prediction.
    pub scores: Vec<f64>,
}

impl ScenePredictions {
    pub fn new(labels: Vec<usize>, predictions: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != predictions.len() || labels.len() != scores.len() {
            return Err(Error::Data(format!(
                "predictions for {} labels, {} predictions, {} scores",
                labels.len(),
                predictions.len(),
                scores.len()
            )));
        }
        Ok(Self {
            labels,
            predictions,
            scores,
        })
    }

    pub fn gt_count(&self) -> usize {
        self.labels.len()
    }

    /// Candidate indices ordered by score, highest first; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order
    }

    /// Per candidate: correctly predicted and ranked within the top `k`.
    pub fn hits(&self, k: usize) -> Vec<bool> {
        let mut hit = vec![false; self.labels.len()];
        for &j in self.ranking().iter().take(k) {
            hit[j] = self.predictions[j] == self.labels[j];
        }
        hit
    }
}

/// Recall@K in percent: the per-scene fraction of ground-truth triplets
/// recovered within the top `k` predictions, averaged over scenes with at
/// least one triplet. `None` when no scene has one.
pub fn recall_at_k(scenes: &[ScenePredictions], k: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for s in scenes.iter().filter(|s| s.gt_count() > 0) {
        let hits = s.hits(k).iter().filter(|&&h| h).count();
        total += hits as f64 / s.gt_count() as f64;
        counted += 1;
    }
    (counted > 0).then(|| 100.0 * total / counted as f64)
}

/// Recall@K of each predicate pooled over all scenes, in percent; `None`
/// for predicates without ground-truth instances.
pub fn per_predicate_recall(scenes: &[ScenePredictions], k: usize, num_predicates: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; num_predicates];
    let mut counts = vec![0usize; num_predicates];
    for s in scenes {
        for (j, hit) in s.hits(k).into_iter().enumerate() {
            let label = s.labels[j];
            if label < num_predicates {
                counts[label] += 1;
                hits[label] += usize::from(hit);
            }
        }
    }
    hits.iter()
        .zip(&counts)
        .map(|(&h, &c)| (c > 0).then(|| 100.0 * h as f64 / c as f64))
        .collect()
}

/// Mean Recall@K in percent over predicates with at least one instance.
pub fn mean_recall_at_k(scenes: &[ScenePredictions], k: usize, num_predicates: usize) -> Option<f64> {
    let present: Vec<f64> = per_predicate_recall(scenes, k, num_predicates)
        .into_iter()
        .flatten()
        .collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Harmonic mean of recall and mean recall; 0 when both are 0.
pub fn f_at_k(r: f64, mr: f64) -> f64 {
    if r + mr == 0.0 {
        0.0
    } else {
        2.0 * r * mr / (r + mr)
    }
}

/// Percentage `resolved / total`, undefined for an empty total.
pub fn confusion_rate(resolved: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * resolved as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub gt: usize,
    pub confused: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub gt: usize,
    pub confused: usize,
    pub resolved: usize,
    pub total: usize,
    /// `null` when `total` is 0.
    pub rate: Option<f64>,
}

fn check_aligned(a: &[ScenePredictions], b: &[ScenePredictions]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "compared runs cover {} and {} scenes",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.labels != y.labels {
            return Err(Error::Data(format!(
                "compared runs disagree on the labels of scene {i}"
            )));
        }
    }
    Ok(())
}

/// For each pair, `total` counts candidates of ground truth `gt` that model
/// A labels `confused`; `resolved` counts those that model B labels `gt`.
pub fn confusion_resolution(
    a: &[ScenePredictions],
    b: &[ScenePredictions],
    pairs: &[ConfusionPair],
) -> Result<Vec<ConfusionRow>> {
    check_aligned(a, b)?;
    Ok(pairs
        .iter()
        .map(|p| {
            let mut total = 0;
            let mut resolved = 0;
            for (sa, sb) in a.iter().zip(b) {
                for j in 0..sa.labels.len() {
                    if sa.labels[j] == p.gt && sa.predictions[j] == p.confused {
                        total += 1;
                        resolved += usize::from(sb.predictions[j] == p.gt);
                    }
                }
            }
            ConfusionRow {
                gt: p.gt,
                confused: p.confused,
                resolved,
                total,
                rate: confusion_rate(resolved, total),
            }
        })
        .collect())
}

/// Off-diagonal (ground truth, prediction) pairs of one run, most frequent
/// first; ties ordered by the pair itself.
pub fn frequent_confusions(scenes: &[ScenePredictions], limit: usize) -> Vec<ConfusionPair> {
    let mut counts: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    for s in scenes {
        for (&gt, &pred) in s.labels.iter().zip(&s.predictions) {
            if gt != pred {
                *counts.entry((gt, pred)).or_default() += 1;
            }
        }
    }
    let mut pairs: Vec<((usize, usize), usize)> = counts.into_iter().collect();
    pairs.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    pairs
        .into_iter()
        .take(limit)
        .map(|((gt, confused), _)| ConfusionPair { gt, confused })
        .collect()
}

/// Recall metrics at one cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub recall: Option<f64>,
    pub mean_recall: Option<f64>,
    pub f: Option<f64>,
}

pub fn k_metrics(scenes: &[ScenePredictions], k: usize, num_predicates: usize) -> KMetrics {
    let recall = recall_at_k(scenes, k);
    let mean_recall = mean_recall_at_k(scenes, k, num_predicates);
    let f = match (recall, mean_recall) {
        (Some(r), Some(mr)) => Some(f_at_k(r, mr)),
        _ => None,
    };
    KMetrics {
        k,
        recall,
        mean_recall,
        f,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bin: String,
    pub scenes: usize,
    pub metrics: Vec<KMetrics>,
}

/// Partitions scenes by ground-truth count and evaluates each bin.
pub fn density_binned(scenes: &[ScenePredictions], ks: &[usize], num_predicates: usize) -> Vec<BinReport> {
    DensityBin::ALL
        .iter()
        .map(|&bin| {
            let members: Vec<ScenePredictions> = scenes
                .iter()
                .filter(|s| DensityBin::of(s.gt_count()) == bin)
                .cloned()
                .collect();
            BinReport {
                bin: bin.label().to_string(),
                scenes: members.len(),
                metrics: ks.iter().map(|&k| k_metrics(&members, k, num_predicates)).collect(),
            }
        })
        .collect()
}

/// Accuracy over the candidates selected by `mask`, in percent.
pub fn subset_accuracy(scenes: &[ScenePredictions], mask: &[Vec<bool>]) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (s, m) in scenes.iter().zip(mask) {
        for j in 0..s.labels.len() {
            if m.get(j).copied().unwrap_or(false) {
                total += 1;
                correct += usize::from(s.predictions[j] == s.labels[j]);
            }
        }
    }
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}
