use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::Result;
use crate::model::{forward_image, Model};

use super::metrics::{
    density_binned, k_metrics, per_predicate_recall, subset_accuracy, BinReport, ConfusionRow, KMetrics,
    ScenePredictions,
};

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 2] = [50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: usize,
    pub candidates: usize,
    pub metrics: Vec<KMetrics>,
    /// Pooled recall of each predicate at the largest cut-off; `null` for
    /// predicates absent from the evaluated scenes.
    pub per_predicate_recall: Vec<Option<f64>>,
    pub predicate_names: Vec<String>,
    /// Predicates left out of mean recall because they never occur.
    pub skipped_predicates: Vec<String>,
    pub bins: Vec<BinReport>,
    /// Top-1 accuracy over candidates flagged ambiguous.
    pub ambiguous_accuracy: Option<f64>,
    /// Mean over scenes of the mean ℓ2 distance between adapted and static
    /// prototypes.
    pub drift: f64,
    pub confusion: Vec<ConfusionRow>,
}

/// Predictions of `model` on every scene, in scene order.
pub fn predict(model: &Model, scenes: &[Scene]) -> Result<(Vec<ScenePredictions>, f64)> {
    let outputs: Vec<Result<(ScenePredictions, f64)>> = scenes
        .par_iter()
        .map(|s| {
            let out = forward_image(model, s)?;
            let c = out.classification.clone();
            Ok((ScenePredictions::new(s.labels(), c.predictions, c.scores)?, out.drift()))
        })
        .collect();
    let mut preds = Vec::with_capacity(scenes.len());
    let mut drift = 0.0;
    for o in outputs {
        let (p, d) = o?;
        preds.push(p);
        drift += d;
    }
    let drift = if scenes.is_empty() {
        0.0
    } else {
        drift / scenes.len() as f64
    };
    Ok((preds, drift))
}

pub fn evaluate(model: &Model, scenes: &[Scene], ks: &[usize]) -> Result<(MetricsReport, Vec<ScenePredictions>)> {
    let (preds, drift) = predict(model, scenes)?;
    let r = model.config.num_predicates();
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let per_predicate = per_predicate_recall(&preds, k_max, r);
    let names = model.config.predicate_names.clone();
    let skipped = per_predicate
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.is_none())
        .map(|(_, n)| n.clone())
        .collect();
    let mask: Vec<Vec<bool>> = scenes
        .iter()
        .map(|s| s.candidates.iter().map(|c| c.ambiguous).collect())
        .collect();
    let report = MetricsReport {
        scenes: scenes.len(),
        candidates: scenes.iter().map(Scene::len).sum(),
        metrics: ks.iter().map(|&k| k_metrics(&preds, k, r)).collect(),
        per_predicate_recall: per_predicate,
        predicate_names: names,
        skipped_predicates: skipped,
        bins: density_binned(&preds, ks, r),
        ambiguous_accuracy: subset_accuracy(&preds, &mask),
        drift,
        confusion: Vec::new(),
    };
    Ok((report, preds))
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| crate::Error::Numeric(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Aligned-column console rendering.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenes {}  candidates {}", self.scenes, self.candidates);
        let _ = writeln!(out, "{:>6} {:>9} {:>9} {:>9}", "K", "R@K", "mR@K", "F@K");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{:>6} {:>9} {:>9} {:>9}",
                m.k,
                pct(m.recall),
                pct(m.mean_recall),
                pct(m.f)
            );
        }
        let _ = writeln!(out, "ambiguous accuracy {}", pct(self.ambiguous_accuracy));
        let _ = writeln!(out, "drift {:.6}", self.drift);
        if !self.skipped_predicates.is_empty() {
            let _ = writeln!(out, "absent from mean recall: {}", self.skipped_predicates.join(", "));
        }
        let _ = writeln!(out, "{:<12} {:>6} {:>9} {:>9}", "bin", "scenes", "mR@K", "K");
        for b in &self.bins {
            for m in &b.metrics {
                let _ = writeln!(
                    out,
                    "{:<12} {:>6} {:>9} {:>9}",
                    b.bin,
                    b.scenes,
                    pct(m.mean_recall),
                    m.k
                );
            }
        }
        let _ = writeln!(out, "{:<16} {:>9}", "predicate", "recall");
        for (n, v) in self.predicate_names.iter().zip(&self.per_predicate_recall) {
            let _ = writeln!(out, "{:<16} {:>9}", n, pct(*v));
        }
        if !self.confusion.is_empty() {
            out.push_str(&confusion_table(&self.confusion, &self.predicate_names));
        }
        out
    }
}

pub fn confusion_table(rows: &[ConfusionRow], names: &[String]) -> String {
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<16} {:>14} {:>9}",
        "ground truth", "confused as", "resolved", "rate"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>14} {:>9}",
            name(r.gt),
            name(r.confused),
            format!("{} ({})", r.resolved, r.total),
            pct(r.rate)
        );
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}
