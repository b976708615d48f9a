//! The model's operations, each available on a [`Tape`] (for training)
//! and as a plain function on matrices.

use log::warn;

use super::params::ParamSet;
use super::UpdaterKind;
use crate::error::{Error, Result};
use crate::numerics::kernels::{self, sigmoid, LAYER_NORM_EPS};
use crate::numerics::{Matrix, Tape, Var};

/// Attention output together with its row-stochastic weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub output: Matrix,
    pub weights: Matrix,
}

/// Row `r` is `W_p · t_r`: `words (R × d_word) · W_pᵀ`.
pub fn static_prototypes_on(tape: &mut Tape, proj: Var, words: Var) -> Result<Var> {
    tape.linear(words, proj)
}

pub fn build_static_prototypes(proj: &Matrix, words: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (p, w) = (tape.leaf(proj.clone()), tape.leaf(words.clone()));
    let out = static_prototypes_on(&mut tape, p, w)?;
    Ok(tape.value(out).clone())
}

/// Fusion weights: a shared per-entity map `relu(W_x x + W_t t)` followed
/// by a two-layer perceptron on `[v_s ; v_o]`.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub w_x: Var,
    pub w_t: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub fn fuse_on(
    tape: &mut Tape,
    subj_feat: Var,
    subj_word: Var,
    obj_feat: Var,
    obj_word: Var,
    w: FusionVars,
) -> Result<Var> {
    let entity = |tape: &mut Tape, feat: Var, word: Var| -> Result<Var> {
        let a = tape.linear(feat, w.w_x)?;
        let b = tape.linear(word, w.w_t)?;
        let s = tape.add(a, b)?;
        Ok(tape.relu(s))
    };
    let vs = entity(tape, subj_feat, subj_word)?;
    let vo = entity(tape, obj_feat, obj_word)?;
    let joint = tape.concat_cols(vs, vo)?;
    let hidden = tape.affine(joint, w.w1, w.b1)?;
    let hidden = tape.relu(hidden);
    tape.affine(hidden, w.w2, w.b2)
}

/// Fuses a batch of candidates; rows of the four inputs correspond.
/// `params` must hold the `fuse.*` tensors.
pub fn fuse_relation(
    subj_feat: &Matrix,
    subj_word: &Matrix,
    obj_feat: &Matrix,
    obj_word: &Matrix,
    params: &ParamSet,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = FusionVars {
        w_x: tape.leaf(params.require("fuse.w_x")?.clone()),
        w_t: tape.leaf(params.require("fuse.w_t")?.clone()),
        w1: tape.leaf(params.require("fuse.w1")?.clone()),
        b1: tape.leaf(params.require("fuse.b1")?.clone()),
        w2: tape.leaf(params.require("fuse.w2")?.clone()),
        b2: tape.leaf(params.require("fuse.b2")?.clone()),
    };
    let sf = tape.leaf(subj_feat.clone());
    let sw = tape.leaf(subj_word.clone());
    let of = tape.leaf(obj_feat.clone());
    let ow = tape.leaf(obj_word.clone());
    let e = fuse_on(&mut tape, sf, sw, of, ow, vars)?;
    Ok(tape.value(e).clone())
}

/// Single-head scaled dot-product attention of `queries` over `keys`:
/// `softmax((Q W_qᵀ)(K W_kᵀ)ᵀ / √d) · K W_vᵀ`. Returns `(output, weights)`.
pub fn cross_attention_on(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
) -> Result<(Var, Var)> {
    let d = tape.value(w_q).rows() as f64;
    let q = tape.linear(queries, w_q)?;
    let k = tape.linear(keys, w_k)?;
    let v = tape.linear(keys, w_v)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / d.sqrt());
    let weights = tape.softmax_rows(scores)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

fn attention(queries: &Matrix, keys: &Matrix, w_q: &Matrix, w_k: &Matrix, w_v: &Matrix) -> Result<Attention> {
    let mut tape = Tape::new();
    let ids = [queries, keys, w_q, w_k, w_v].map(|m| tape.leaf(m.clone()));
    let (out, weights) = cross_attention_on(&mut tape, ids[0], ids[1], ids[2], ids[3], ids[4])?;
    Ok(Attention {
        output: tape.value(out).clone(),
        weights: tape.value(weights).clone(),
    })
}

/// Context signal for every prototype from the image's relation
/// embeddings (`R × d`). `None` when the image has no candidates, which
/// tells the updater to skip adaptation.
pub fn context_attention(
    static_protos: &Matrix,
    embeddings: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
) -> Result<Option<Attention>> {
    if embeddings.rows() == 0 {
        return Ok(None);
    }
    attention(static_protos, embeddings, w_q, w_k, w_v).map(Some)
}

/// Feedback signal for every relation from the adapted prototypes (`N × d`).
pub fn feedback_attention(
    embeddings: &Matrix,
    adapted: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
) -> Result<Attention> {
    if adapted.rows() == 0 {
        return Err(Error::Config("prototype set may never be empty".into()));
    }
    attention(embeddings, adapted, w_q, w_k, w_v)
}

/// Updater tensors bound on a tape.
#[derive(Debug, Clone)]
pub enum UpdaterVars {
    Identity,
    PlainAdd,
    Gru { gain: Var, bias: Var, weights: [Var; 12] },
    Concat { w: Var, b: Var },
    Residual { w: Var },
    Ema { alpha: Var },
}

pub fn adapt_on(tape: &mut Tape, static_protos: Var, context: Var, upd: &UpdaterVars) -> Result<Var> {
    match upd {
        UpdaterVars::Identity => Ok(static_protos),
        UpdaterVars::PlainAdd => tape.add(static_protos, context),
        UpdaterVars::Gru { gain, bias, weights } => {
            let h = tape.layer_norm(static_protos, *gain, *bias, LAYER_NORM_EPS)?;
            tape.gru(context, h, *weights)
        }
        UpdaterVars::Concat { w, b } => {
            let joint = tape.concat_cols(static_protos, context)?;
            tape.affine(joint, *w, *b)
        }
        UpdaterVars::Residual { w } => {
            let r = tape.linear(context, *w)?;
            tape.add(static_protos, r)
        }
        UpdaterVars::Ema { alpha } => ema_on(tape, static_protos, context, *alpha),
    }
}

/// `(1 − σ(α)) p̄ + σ(α) u` with a learnable scalar `α`.
fn ema_on(tape: &mut Tape, static_protos: Var, context: Var, alpha: Var) -> Result<Var> {
    let p = tape.value(static_protos).clone();
    let u = tape.value(context).clone();
    if p.shape() != u.shape() {
        return Err(Error::Dimension {
            op: "ema",
            lhs: p.shape(),
            rhs: u.shape(),
        });
    }
    let s = sigmoid(tape.value(alpha).get(0, 0));
    let value = Matrix::from_fn(p.rows(), p.cols(), |i, j| (1.0 - s) * p.get(i, j) + s * u.get(i, j));
    Ok(tape.custom(
        vec![static_protos, context, alpha],
        value,
        Box::new(move |g: &Matrix| {
            let diff: f64 = g
                .data()
                .iter()
                .zip(p.data().iter().zip(u.data()))
                .map(|(gv, (pv, uv))| gv * (uv - pv))
                .sum();
            vec![g.scale(1.0 - s), g.scale(s), Matrix::scalar(diff * s * (1.0 - s))]
        }),
    ))
}

pub fn bind_updater(tape: &mut Tape, kind: UpdaterKind, params: &ParamSet) -> Result<UpdaterVars> {
    let mut leaf = |name: &str| -> Result<Var> { Ok(tape.leaf(params.require(name)?.clone())) };
    Ok(match kind {
        UpdaterKind::Identity => UpdaterVars::Identity,
        UpdaterKind::PlainAdd => UpdaterVars::PlainAdd,
        UpdaterKind::Gru => {
            let gain = leaf("upd.ln.gain")?;
            let bias = leaf("upd.ln.bias")?;
            let mut weights = Vec::with_capacity(12);
            for n in crate::numerics::gru::GRU_PARAM_NAMES {
                weights.push(leaf(&format!("upd.gru.{n}"))?);
            }
            UpdaterVars::Gru {
                gain,
                bias,
                weights: weights.try_into().expect("twelve gru tensors"),
            }
        }
        UpdaterKind::Concat => UpdaterVars::Concat {
            w: leaf("upd.w")?,
            b: leaf("upd.b")?,
        },
        UpdaterKind::Residual => UpdaterVars::Residual { w: leaf("upd.w_res")? },
        UpdaterKind::Ema => UpdaterVars::Ema {
            alpha: leaf("upd.alpha")?,
        },
    })
}

/// Per-image prototypes. `context` is `None` for images without
/// candidates, in which case every variant returns the static prototypes.
pub fn adapt_prototypes(
    static_protos: &Matrix,
    context: Option<&Matrix>,
    kind: UpdaterKind,
    params: &ParamSet,
) -> Result<Matrix> {
    let Some(u) = context else {
        return Ok(static_protos.clone());
    };
    let mut tape = Tape::new();
    let upd = bind_updater(&mut tape, kind, params)?;
    let (p, c) = (tape.leaf(static_protos.clone()), tape.leaf(u.clone()));
    let out = adapt_on(&mut tape, p, c, &upd)?;
    Ok(tape.value(out).clone())
}

/// Recalibration tensors: layer norm on the raw embedding, then one affine
/// map from `2d` to `d`.
#[derive(Debug, Clone, Copy)]
pub struct RecalVars {
    pub gain: Var,
    pub bias: Var,
    pub w: Var,
    pub b: Var,
}

pub fn recalibrate_on(tape: &mut Tape, embeddings: Var, feedback: Var, v: RecalVars) -> Result<Var> {
    let normed = tape.layer_norm(embeddings, v.gain, v.bias, LAYER_NORM_EPS)?;
    let joint = tape.concat_cols(normed, feedback)?;
    tape.affine(joint, v.w, v.b)
}

pub fn recalibrate(
    embeddings: &Matrix,
    feedback: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
    w: &Matrix,
    b: &Matrix,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let e = tape.leaf(embeddings.clone());
    let u = tape.leaf(feedback.clone());
    let v = RecalVars {
        gain: tape.leaf(gain.clone()),
        bias: tape.leaf(bias.clone()),
        w: tape.leaf(w.clone()),
        b: tape.leaf(b.clone()),
    };
    let out = recalibrate_on(&mut tape, e, u, v)?;
    Ok(tape.value(out).clone())
}

/// `logits[j, r] = cos(ẽ_j, p̄_r) / temperature`.
pub fn cosine_logits_on(tape: &mut Tape, relations: Var, static_protos: Var, temperature: f64) -> Result<Var> {
    warn_zero_rows(tape.value(relations), "relation embedding");
    warn_zero_rows(tape.value(static_protos), "prototype");
    let a = tape.normalize_rows(relations);
    let b = tape.normalize_rows(static_protos);
    let bt = tape.transpose(b);
    let cos = tape.matmul(a, bt)?;
    Ok(tape.scale(cos, 1.0 / temperature))
}

fn warn_zero_rows(m: &Matrix, what: &str) {
    let zeros = m.iter_rows().filter(|r| r.iter().all(|v| *v == 0.0)).count();
    if zeros > 0 {
        warn!("{zeros} zero-norm {what} row(s); cosine treated as 0");
    }
}

/// Classifier output for a batch of relations.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub logits: Matrix,
    pub probabilities: Matrix,
    pub predictions: Vec<usize>,
    /// Probability of the predicted class, used to rank triplets.
    pub scores: Vec<f64>,
}

impl Classification {
    pub fn from_logits(logits: Matrix) -> Result<Self> {
        let probabilities = if logits.rows() == 0 {
            Matrix::zeros(0, logits.cols())
        } else {
            kernels::softmax_rows(&logits)?
        };
        let mut predictions = Vec::with_capacity(logits.rows());
        let mut scores = Vec::with_capacity(logits.rows());
        for (lrow, prow) in logits.iter_rows().zip(probabilities.iter_rows()) {
            let best = argmax(lrow);
            predictions.push(best);
            scores.push(prow[best]);
        }
        Ok(Self {
            logits,
            probabilities,
            predictions,
            scores,
        })
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn classify(relations: &Matrix, static_protos: &Matrix, temperature: f64) -> Result<Classification> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut tape = Tape::new();
    let (e, p) = (tape.leaf(relations.clone()), tape.leaf(static_protos.clone()));
    let logits = cosine_logits_on(&mut tape, e, p, temperature)?;
    Classification::from_logits(tape.value(logits).clone())
}

/// Pairwise cosine similarities between rows, exactly symmetric, with a
/// unit diagonal for nonzero rows.
pub fn cosine_similarity_matrix(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let nonzero = m.row(i).iter().any(|v| *v != 0.0);
        out.set(i, i, if nonzero { 1.0 } else { 0.0 });
        for j in i + 1..n {
            let c = kernels::cosine(m.row(i), m.row(j));
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    out
}

/// `Δ[r, r'] = cos(p_r, p_r') − cos(p̄_r, p̄_r')`.
pub fn similarity_shift(static_protos: &Matrix, adapted: &Matrix) -> Result<Matrix> {
    if static_protos.shape() != adapted.shape() {
        return Err(Error::Dimension {
            op: "similarity_shift",
            lhs: static_protos.shape(),
            rhs: adapted.shape(),
        });
    }
    kernels::sub(
        &cosine_similarity_matrix(adapted),
        &cosine_similarity_matrix(static_protos),
    )
}
