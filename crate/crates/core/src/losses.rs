//! Training objective: prototype regularisation, contrastive alignment
//! against static prototypes, (optionally reweighted) cross-entropy, and
//! their weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kernels::{l2_normalize_rows, l2_normalize_rows_backward, squared_distance};
use crate::numerics::{Matrix, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma_div: f64,
    pub gamma_align: f64,
    pub lambda_sim: f64,
    pub lambda_div: f64,
    pub lambda_align: f64,
    /// Frequency-aware reweighting of the cross-entropy term.
    pub reweight: bool,
    pub reweight_beta: f64,
    pub reweight_clip: [f64; 2],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma_div: 3.0,
            gamma_align: 20.0,
            lambda_sim: 1.0,
            lambda_div: 1.0,
            lambda_align: 1.0,
            reweight: false,
            reweight_beta: 0.5,
            reweight_clip: [0.1, 10.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_div > 0.0 && self.gamma_align > 0.0) {
            return Err(Error::Config("loss margins must be positive".into()));
        }
        if [self.lambda_sim, self.lambda_div, self.lambda_align]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        let [lo, hi] = self.reweight_clip;
        if !(lo <= hi) || !(lo > 0.0) {
            return Err(Error::Config(format!("invalid reweight clip [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg_sim: f64,
    pub reg_div: f64,
    pub align: f64,
    pub total: f64,
}

/// Weighted total of the four components.
pub fn total_loss(cls: f64, reg: RegTerms, align: f64, config: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        cls,
        reg_sim: reg.sim,
        reg_div: reg.div,
        align,
        total: cls + config.lambda_sim * reg.sim + config.lambda_div * reg.div + config.lambda_align * align,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegTerms {
    pub sim: f64,
    pub div: f64,
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Nearest other row by squared distance; ties go to the lower index.
fn nearest_other(m: &Matrix, r: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for q in 0..m.rows() {
        if q == r {
            continue;
        }
        let d = squared_distance(m.row(r), m.row(q));
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

/// Similarity penalty `‖P̂P̂ᵀ‖₂,₁ / R²` and diversity hinge
/// `(1/R) Σ_r max(0, γ_div − min_{r'≠r} ‖p̂_r − p̂_r'‖²)` on row-normalised
/// prototypes.
pub fn loss_reg(static_protos: &Matrix, gamma_div: f64) -> Result<RegTerms> {
    let r = static_protos.rows();
    if r < 2 {
        return Err(Error::Config(format!("prototype regularisation needs R ≥ 2, got {r}")));
    }
    let unit = l2_normalize_rows(static_protos);
    let rf = r as f64;
    let mut sim = 0.0;
    for i in 0..r {
        let gram_row: Vec<f64> = (0..r)
            .map(|q| unit.row(i).iter().zip(unit.row(q)).map(|(a, b)| a * b).sum())
            .collect();
        sim += row_norm(&gram_row);
    }
    let mut div = 0.0;
    for i in 0..r {
        let (_, d) = nearest_other(&unit, i);
        div += (gamma_div - d).max(0.0);
    }
    Ok(RegTerms {
        sim: sim / (rf * rf),
        div: div / rf,
    })
}

/// Gradient of `g_sim · reg_sim + g_div · reg_div` with respect to the
/// unnormalised prototypes. The nearest-neighbour choice is held fixed.
pub fn loss_reg_backward(static_protos: &Matrix, gamma_div: f64, g_sim: f64, g_div: f64) -> Matrix {
    let r = static_protos.rows();
    let rf = r as f64;
    let d = static_protos.cols();
    let unit = l2_normalize_rows(static_protos);
    let gram = Matrix::from_fn(r, r, |i, q| {
        unit.row(i).iter().zip(unit.row(q)).map(|(a, b)| a * b).sum()
    });
    // dL/dS_i = S_i / ‖S_i‖ · g_sim / R²; dP̂ = (G + Gᵀ) P̂.
    let mut g_gram = Matrix::zeros(r, r);
    for i in 0..r {
        let n = row_norm(gram.row(i));
        if n > 0.0 {
            for q in 0..r {
                g_gram.set(i, q, gram.get(i, q) / n * g_sim / (rf * rf));
            }
        }
    }
    let mut g_unit = Matrix::zeros(r, d);
    for i in 0..r {
        for q in 0..r {
            let coeff = g_gram.get(i, q) + g_gram.get(q, i);
            if coeff != 0.0 {
                for (o, v) in g_unit.row_mut(i).iter_mut().zip(unit.row(q)) {
                    *o += coeff * v;
                }
            }
        }
    }
    for i in 0..r {
        let (q, dist) = nearest_other(&unit, i);
        if gamma_div - dist > 0.0 {
            let scale = 2.0 * g_div / rf;
            for k in 0..d {
                let diff = unit.get(i, k) - unit.get(q, k);
                g_unit.row_mut(i)[k] -= scale * diff;
                g_unit.row_mut(q)[k] += scale * diff;
            }
        }
    }
    l2_normalize_rows_backward(static_protos, &g_unit)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Data(format!("{} labels for {rows} candidates", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Per-candidate margin terms: `(target, nearest negative, hinge value)`.
fn align_terms(relations: &Matrix, labels: &[usize], static_protos: &Matrix, gamma: f64) -> Vec<(usize, usize, f64)> {
    labels
        .iter()
        .enumerate()
        .map(|(j, &pos)| {
            let e = relations.row(j);
            let d_pos = squared_distance(e, static_protos.row(pos));
            let mut neg = (usize::MAX, f64::INFINITY);
            for r in 0..static_protos.rows() {
                if r == pos {
                    continue;
                }
                let d = squared_distance(e, static_protos.row(r));
                if d < neg.1 {
                    neg = (r, d);
                }
            }
            (pos, neg.0, d_pos - neg.1 + gamma)
        })
        .collect()
}

/// Mean over candidates of `max(0, ‖ẽ − p̄⁺‖² − ‖ẽ − p̄⁻‖² + γ)`, where
/// `p̄⁻` is the nearest non-target static prototype.
pub fn loss_align(relations: &Matrix, labels: &[usize], static_protos: &Matrix, gamma: f64) -> Result<f64> {
    check_labels(labels, relations.rows(), static_protos.rows())?;
    if static_protos.rows() < 2 {
        return Err(Error::Config("alignment needs at least two prototypes".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let terms = align_terms(relations, labels, static_protos, gamma);
    Ok(terms.iter().map(|t| t.2.max(0.0)).sum::<f64>() / labels.len() as f64)
}

/// Gradients of `g · loss_align` with respect to relations and prototypes.
pub fn loss_align_backward(
    relations: &Matrix,
    labels: &[usize],
    static_protos: &Matrix,
    gamma: f64,
    g: f64,
) -> (Matrix, Matrix) {
    let mut g_rel = Matrix::zeros(relations.rows(), relations.cols());
    let mut g_proto = Matrix::zeros(static_protos.rows(), static_protos.cols());
    if labels.is_empty() {
        return (g_rel, g_proto);
    }
    let scale = 2.0 * g / labels.len() as f64;
    for (j, (pos, neg, h)) in align_terms(relations, labels, static_protos, gamma)
        .into_iter()
        .enumerate()
    {
        if h <= 0.0 {
            continue;
        }
        for k in 0..relations.cols() {
            let e = relations.get(j, k);
            let dp = e - static_protos.get(pos, k);
            let dn = e - static_protos.get(neg, k);
            g_rel.row_mut(j)[k] += scale * (dp - dn);
            g_proto.row_mut(pos)[k] -= scale * dp;
            g_proto.row_mut(neg)[k] += scale * dn;
        }
    }
    (g_rel, g_proto)
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean over candidates of `w_label · (−log softmax(logits)_label)`.
pub fn loss_cls(logits: &Matrix, labels: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if let Some(w) = weights {
        if w.len() != logits.cols() {
            return Err(Error::Data(format!(
                "{} class weights for {} classes",
                w.len(),
                logits.cols()
            )));
        }
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("loss_cls".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            let w = weights.map_or(1.0, |w| w[y]);
            -w * log_softmax_row(logits.row(j))[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn loss_cls_backward(logits: &Matrix, labels: &[usize], weights: Option<&[f64]>, g: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    if labels.is_empty() {
        return out;
    }
    let n = labels.len() as f64;
    for (j, &y) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[y]);
        let logp = log_softmax_row(logits.row(j));
        for (c, o) in out.row_mut(j).iter_mut().enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *o = g * w * (logp[c].exp() - target) / n;
        }
    }
    out
}

/// `w_r = clip((median / count_r)^β, w_min, w_max)`; empty classes get `w_max`.
pub fn class_weights(counts: &[usize], beta: f64, clip: [f64; 2]) -> Result<Vec<f64>> {
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Data("class weights need at least one labelled example".into()));
    }
    let [lo, hi] = clip;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                hi
            } else {
                (median / c as f64).powf(beta).clamp(lo, hi)
            }
        })
        .collect())
}

/// Records [`loss_cls`] on a tape as a 1×1 node.
pub fn cls_on(tape: &mut Tape, logits: Var, labels: &[usize], weights: Option<Vec<f64>>) -> Result<Var> {
    let lv = tape.value(logits).clone();
    let value = loss_cls(&lv, labels, weights.as_deref())?;
    let labels = labels.to_vec();
    Ok(tape.custom(
        vec![logits],
        Matrix::scalar(value),
        Box::new(move |g| vec![loss_cls_backward(&lv, &labels, weights.as_deref(), g.get(0, 0))]),
    ))
}

/// Records [`loss_align`] on a tape as a 1×1 node.
pub fn align_on(tape: &mut Tape, relations: Var, labels: &[usize], static_protos: Var, gamma: f64) -> Result<Var> {
    let rel = tape.value(relations).clone();
    let protos = tape.value(static_protos).clone();
    let value = loss_align(&rel, labels, &protos, gamma)?;
    let labels = labels.to_vec();
    Ok(tape.custom(
        vec![relations, static_protos],
        Matrix::scalar(value),
        Box::new(move |g| {
            let (a, b) = loss_align_backward(&rel, &labels, &protos, gamma, g.get(0, 0));
            vec![a, b]
        }),
    ))
}

/// Records both regularisation terms; returns `(sim, div)` nodes.
pub fn reg_on(tape: &mut Tape, static_protos: Var, gamma_div: f64) -> Result<(Var, Var)> {
    let protos = tape.value(static_protos).clone();
    let terms = loss_reg(&protos, gamma_div)?;
    let p2 = protos.clone();
    let sim = tape.custom(
        vec![static_protos],
        Matrix::scalar(terms.sim),
        Box::new(move |g| vec![loss_reg_backward(&protos, gamma_div, g.get(0, 0), 0.0)]),
    );
    let div = tape.custom(
        vec![static_protos],
        Matrix::scalar(terms.div),
        Box::new(move |g| vec![loss_reg_backward(&p2, gamma_div, 0.0, g.get(0, 0))]),
    );
    Ok((sim, div))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reg_needs_two_prototypes() {
        assert!(matches!(loss_reg(&Matrix::zeros(1, 3), 3.0), Err(Error::Config(_))));
    }

    #[test]
    fn align_rejects_out_of_range_label() {
        let p = Matrix::identity(3);
        assert!(matches!(
            loss_align(&Matrix::zeros(1, 3), &[3], &p, 20.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn cls_rejects_out_of_range_label() {
        assert!(matches!(
            loss_cls(&Matrix::zeros(1, 2), &[2], None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn class_weights_all_zero_is_an_error() {
        assert!(matches!(class_weights(&[0, 0], 0.5, [0.1, 10.0]), Err(Error::Data(_))));
    }

    #[test]
    fn empty_class_gets_upper_clip() {
        let w = class_weights(&[4, 0, 4], 0.5, [0.1, 10.0]).unwrap();
        assert_eq!(w, vec![1.0, 10.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            lambda_div: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            reweight_clip: [2.0, 1.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
