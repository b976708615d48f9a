//! The gradient-check suite: every differentiable kernel, each model
//! operation, each loss, and the full objective for every updater, at a
//! series of seeded random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::model::ops::{self as mops, FusionVars, RecalVars, UpdaterVars};
use crate::model::{Model, ModelConfig, UpdaterKind};
use crate::numerics::gradcheck::{grad_check, grad_check_piecewise, GradCheckConfig, GradCheckReport, Stencil};
use crate::numerics::kernels::{self, LAYER_NORM_EPS};
use crate::numerics::{Matrix, Tape, Var};
use crate::train::{scene_gradients, scene_objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteDims {
    pub predicates: usize,
    pub candidates: usize,
    pub d_vis: usize,
    pub d_word: usize,
    pub d_model: usize,
}

impl Default for SuiteDims {
    fn default() -> Self {
        Self {
            predicates: 3,
            candidates: 4,
            d_vis: 3,
            d_word: 3,
            d_model: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub points: usize,
    pub dims: SuiteDims,
    /// Settings for kernels, model operations and losses.
    pub check: GradCheckConfig,
    /// Settings for the full objective.
    pub composite: GradCheckConfig,
    /// Flips the sign of one analytic gradient entry of the named check.
    pub fault: Option<String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 20,
            dims: SuiteDims::default(),
            check: GradCheckConfig {
                step: 1e-4,
                tolerance: 1e-5,
                stencil: Stencil::Central4,
            },
            composite: GradCheckConfig {
                step: 1e-4,
                tolerance: 1e-5,
                stencil: Stencil::Adaptive,
            },
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Worst report per check over all points.
    pub reports: Vec<GradCheckReport>,
    pub all_pass: bool,
}

type TapeOp = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    inputs: Vec<Matrix>,
    op: TapeOp,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m: f64 = rng.random_range(0.1..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ out ⊙ F` for a fixed functional `F` with entries of magnitude in
/// [0.5, 1.5].
fn contract(tape: &mut Tape, out: Var, rng: &mut ChaCha8Rng) -> Var {
    let value = tape.value(out);
    let functional = Matrix::from_fn(value.rows(), value.cols(), |_, _| {
        let m: f64 = rng.random_range(0.5..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let s: f64 = value.data().iter().zip(functional.data()).map(|(a, b)| a * b).sum();
    tape.custom(
        vec![out],
        Matrix::scalar(s),
        Box::new(move |g| vec![functional.scale(g.get(0, 0))]),
    )
}

fn split(flat: &[f64], like: &[Matrix]) -> Vec<Matrix> {
    let mut off = 0;
    like.iter()
        .map(|m| {
            let n = m.len();
            let out = Matrix::new(m.rows(), m.cols(), flat[off..off + n].to_vec()).expect("shape");
            off += n;
            out
        })
        .collect()
}

fn run_case(case: &Case, rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let functional_seed: u64 = rng.random();
    let eval = |inputs: &[Matrix], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut r = ChaCha8Rng::seed_from_u64(functional_seed);
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = (case.op)(&mut tape, &vars)?;
        let scalar = if tape.value(out).shape() == (1, 1) {
            out
        } else {
            contract(&mut tape, out, &mut r)
        };
        let value = tape.value(scalar).get(0, 0);
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(scalar)?;
        let flat = vars
            .iter()
            .flat_map(|v| grads.get_or_zeros(&tape, *v).into_data())
            .collect();
        Ok((value, flat))
    };
    let point: Vec<f64> = case.inputs.iter().flat_map(|m| m.data().iter().copied()).collect();
    let (_, mut analytic) = eval(&case.inputs, true)?;
    inject_fault(&case.name, &mut analytic, cfg);
    grad_check(
        &case.name,
        |x| eval(&split(x, &case.inputs), false).map(|(v, _)| v),
        &point,
        &analytic,
        &cfg.check,
    )
}

fn inject_fault(name: &str, analytic: &mut [f64], cfg: &SuiteConfig) {
    if cfg.fault.as_deref() == Some(name) {
        if let Some(i) = (0..analytic.len()).max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs())) {
            analytic[i] = -analytic[i];
        }
    }
}

fn kernel_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let mut add = |name: &str, inputs: Vec<Matrix>, op: TapeOp| {
        cases.push(Case {
            name: name.to_string(),
            inputs,
            op,
        })
    };
    add(
        "matmul",
        vec![uniform(rng, 3, 4, 1.0), uniform(rng, 4, 2, 1.0)],
        Box::new(|t, v| t.matmul(v[0], v[1])),
    );
    add(
        "transpose",
        vec![uniform(rng, 2, 3, 1.0)],
        Box::new(|t, v| Ok(t.transpose(v[0]))),
    );
    add(
        "hadamard",
        vec![uniform(rng, 2, 3, 1.0), uniform(rng, 2, 3, 1.0)],
        Box::new(|t, v| t.mul(v[0], v[1])),
    );
    add(
        "sub",
        vec![uniform(rng, 2, 3, 1.0), uniform(rng, 2, 3, 1.0)],
        Box::new(|t, v| t.sub(v[0], v[1])),
    );
    add(
        "softmax_rows",
        vec![uniform(rng, 3, 5, 3.0)],
        Box::new(|t, v| t.softmax_rows(v[0])),
    );
    add(
        "layer_norm",
        vec![
            uniform(rng, 3, 6, 2.0),
            uniform(rng, 1, 6, 1.5),
            uniform(rng, 1, 6, 1.0),
        ],
        Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
    );
    let mut gru_inputs = vec![uniform(rng, 2, 3, 1.0), uniform(rng, 2, 4, 1.0)];
    for name in crate::numerics::gru::GRU_PARAM_NAMES {
        let (r, c) = if name.starts_with("w_i") {
            (4, 3)
        } else if name.starts_with('w') {
            (4, 4)
        } else {
            (1, 4)
        };
        gru_inputs.push(uniform(rng, r, c, 1.0));
    }
    add(
        "gru_cell",
        gru_inputs,
        Box::new(|t, v| t.gru(v[0], v[1], v[2..14].try_into().expect("twelve"))),
    );
    add(
        "sigmoid",
        vec![uniform(rng, 2, 4, 3.0)],
        Box::new(|t, v| Ok(t.sigmoid(v[0]))),
    );
    add("tanh", vec![uniform(rng, 2, 4, 3.0)], Box::new(|t, v| Ok(t.tanh(v[0]))));
    add(
        "relu",
        vec![away_from_zero(rng, 2, 4)],
        Box::new(|t, v| Ok(t.relu(v[0]))),
    );
    add(
        "concat_cols",
        vec![uniform(rng, 2, 3, 1.0), uniform(rng, 2, 2, 1.0)],
        Box::new(|t, v| t.concat_cols(v[0], v[1])),
    );
    add(
        "affine",
        vec![
            uniform(rng, 3, 4, 1.0),
            uniform(rng, 2, 4, 1.0),
            uniform(rng, 1, 2, 1.0),
        ],
        Box::new(|t, v| t.affine(v[0], v[1], v[2])),
    );
    add(
        "l2_normalize_rows",
        vec![away_from_zero(rng, 3, 4)],
        Box::new(|t, v| Ok(t.normalize_rows(v[0]))),
    );
    add(
        "squared_distance",
        vec![uniform(rng, 1, 5, 1.0), uniform(rng, 1, 5, 1.0)],
        Box::new(|t, v| {
            let (a, b) = (t.value(v[0]).clone(), t.value(v[1]).clone());
            let value = kernels::squared_distance(a.data(), b.data());
            Ok(t.custom(
                vec![v[0], v[1]],
                Matrix::scalar(value),
                Box::new(move |g| {
                    let ga = kernels::squared_distance_backward(a.data(), b.data(), g.get(0, 0));
                    let gb: Vec<f64> = ga.iter().map(|x| -x).collect();
                    vec![Matrix::row_vector(&ga), Matrix::row_vector(&gb)]
                }),
            ))
        }),
    );
    add(
        "cosine",
        vec![away_from_zero(rng, 1, 5), away_from_zero(rng, 1, 5)],
        Box::new(|t, v| {
            let (a, b) = (t.value(v[0]).clone(), t.value(v[1]).clone());
            let value = kernels::cosine(a.data(), b.data());
            Ok(t.custom(
                vec![v[0], v[1]],
                Matrix::scalar(value),
                Box::new(move |g| {
                    let (ga, gb) = kernels::cosine_backward(a.data(), b.data(), g.get(0, 0));
                    vec![Matrix::row_vector(&ga), Matrix::row_vector(&gb)]
                }),
            ))
        }),
    );
    cases
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..r)).collect()
}

/// ReLU inputs of the fusion network, in evaluation order.
fn fusion_preactivations(inputs: [&Matrix; 8]) -> Result<Vec<f64>> {
    let [sf, sw, of, ow, w_x, w_t, w1, b1] = inputs;
    let mut pre = Vec::new();
    let mut entity = |feat: &Matrix, word: &Matrix| -> Result<Matrix> {
        let a = kernels::matmul(feat, &w_x.transpose())?;
        let b = kernels::matmul(word, &w_t.transpose())?;
        let z = kernels::add(&a, &b)?;
        pre.extend_from_slice(z.data());
        Ok(kernels::relu_m(&z))
    };
    let joint = kernels::concat_cols(&entity(sf, sw)?, &entity(of, ow)?)?;
    let hidden = kernels::affine(&joint, w1, b1)?;
    pre.extend_from_slice(hidden.data());
    Ok(pre)
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().map(|z| z.abs()).fold(f64::INFINITY, f64::min)
}

fn fusion_inputs(rng: &mut ChaCha8Rng, n: usize, d_vis: usize, d_word: usize, d: usize) -> Vec<Matrix> {
    loop {
        let inputs = vec![
            uniform(rng, n, d_vis, 1.0),
            uniform(rng, n, d_word, 1.0),
            uniform(rng, n, d_vis, 1.0),
            uniform(rng, n, d_word, 1.0),
            uniform(rng, d, d_vis, 1.0),
            uniform(rng, d, d_word, 1.0),
            uniform(rng, d, 2 * d, 1.0),
            uniform(rng, 1, d, 0.5),
            uniform(rng, d, d, 1.0),
            uniform(rng, 1, d, 0.5),
        ];
        let refs = [
            &inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4], &inputs[5], &inputs[6], &inputs[7],
        ];
        if fusion_preactivations(refs)
            .map(|p| min_abs(&p) > KINK_MARGIN)
            .unwrap_or(false)
        {
            return inputs;
        }
    }
}

fn smooth_align_inputs(
    rng: &mut ChaCha8Rng,
    n: usize,
    r: usize,
    d: usize,
    labels: &[usize],
    gamma: f64,
) -> Vec<Matrix> {
    loop {
        let (rel, protos) = (uniform(rng, n, d, 2.0), uniform(rng, r, d, 2.0));
        if align_margin(&rel, labels, &protos, gamma) > KINK_MARGIN {
            return vec![rel, protos];
        }
    }
}

fn smooth_reg_input(rng: &mut ChaCha8Rng, r: usize, d: usize) -> Matrix {
    loop {
        let protos = away_from_zero(rng, r, d);
        if reg_margin(&protos, 3.0) > KINK_MARGIN {
            return protos;
        }
    }
}

fn model_cases(rng: &mut ChaCha8Rng, dims: &SuiteDims) -> Vec<Case> {
    let SuiteDims {
        predicates: r,
        candidates: n,
        d_vis,
        d_word,
        d_model: d,
    } = *dims;
    let mut cases = Vec::new();
    let mut add = |name: &str, inputs: Vec<Matrix>, op: TapeOp| {
        cases.push(Case {
            name: name.to_string(),
            inputs,
            op,
        })
    };
    add(
        "static_prototypes",
        vec![uniform(rng, d, d_word, 1.0), uniform(rng, r, d_word, 1.0)],
        Box::new(|t, v| mops::static_prototypes_on(t, v[0], v[1])),
    );
    add(
        "fuse_relation",
        fusion_inputs(rng, n, d_vis, d_word, d),
        Box::new(|t, v| {
            let w = FusionVars {
                w_x: v[4],
                w_t: v[5],
                w1: v[6],
                b1: v[7],
                w2: v[8],
                b2: v[9],
            };
            mops::fuse_on(t, v[0], v[1], v[2], v[3], w)
        }),
    );
    let attention_inputs = |rng: &mut ChaCha8Rng, q_rows: usize, k_rows: usize| {
        vec![
            uniform(rng, q_rows, d, 1.5),
            uniform(rng, k_rows, d, 1.5),
            uniform(rng, d, d, 1.0),
            uniform(rng, d, d, 1.0),
            uniform(rng, d, d, 1.0),
        ]
    };
    add(
        "context_attention",
        attention_inputs(rng, r, n),
        Box::new(|t, v| mops::cross_attention_on(t, v[0], v[1], v[2], v[3], v[4]).map(|x| x.0)),
    );
    add(
        "feedback_attention",
        attention_inputs(rng, n, r),
        Box::new(|t, v| mops::cross_attention_on(t, v[0], v[1], v[2], v[3], v[4]).map(|x| x.0)),
    );
    for kind in UpdaterKind::ALL {
        let mut inputs = vec![uniform(rng, r, d, 1.0), uniform(rng, r, d, 1.0)];
        let extra: Vec<Matrix> = match kind {
            UpdaterKind::Identity | UpdaterKind::PlainAdd => vec![],
            UpdaterKind::Gru => {
                let mut v = vec![uniform(rng, 1, d, 1.5), uniform(rng, 1, d, 0.5)];
                for name in crate::numerics::gru::GRU_PARAM_NAMES {
                    let rows = if name.starts_with('w') { d } else { 1 };
                    v.push(uniform(rng, rows, d, 1.0));
                }
                v
            }
            UpdaterKind::Concat => vec![uniform(rng, d, 2 * d, 1.0), uniform(rng, 1, d, 0.5)],
            UpdaterKind::Residual => vec![uniform(rng, d, d, 1.0)],
            UpdaterKind::Ema => vec![uniform(rng, 1, 1, 1.0)],
        };
        inputs.extend(extra);
        add(
            &format!("adapt_prototypes[{kind}]"),
            inputs,
            Box::new(move |t, v| {
                let upd = match kind {
                    UpdaterKind::Identity => UpdaterVars::Identity,
                    UpdaterKind::PlainAdd => UpdaterVars::PlainAdd,
                    UpdaterKind::Gru => UpdaterVars::Gru {
                        gain: v[2],
                        bias: v[3],
                        weights: v[4..16].try_into().expect("twelve"),
                    },
                    UpdaterKind::Concat => UpdaterVars::Concat { w: v[2], b: v[3] },
                    UpdaterKind::Residual => UpdaterVars::Residual { w: v[2] },
                    UpdaterKind::Ema => UpdaterVars::Ema { alpha: v[2] },
                };
                mops::adapt_on(t, v[0], v[1], &upd)
            }),
        );
    }
    add(
        "recalibrate",
        vec![
            uniform(rng, n, d, 1.5),
            uniform(rng, n, d, 1.0),
            uniform(rng, 1, d, 1.5),
            uniform(rng, 1, d, 0.5),
            uniform(rng, d, 2 * d, 1.0),
            uniform(rng, 1, d, 0.5),
        ],
        Box::new(|t, v| {
            let w = RecalVars {
                gain: v[2],
                bias: v[3],
                w: v[4],
                b: v[5],
            };
            mops::recalibrate_on(t, v[0], v[1], w)
        }),
    );
    add(
        "classify",
        vec![away_from_zero(rng, n, d), away_from_zero(rng, r, d)],
        Box::new(|t, v| mops::cosine_logits_on(t, v[0], v[1], 0.1)),
    );

    let labels = random_labels(rng, n, r);
    let l2 = labels.clone();
    add(
        "loss_cls",
        vec![uniform(rng, n, r, 3.0)],
        Box::new(move |t, v| losses::cls_on(t, v[0], &l2, None)),
    );
    let l3 = labels.clone();
    let weights: Vec<f64> = (0..r).map(|_| rng.random_range(0.2..3.0)).collect();
    add(
        "loss_cls[weighted]",
        vec![uniform(rng, n, r, 3.0)],
        Box::new(move |t, v| losses::cls_on(t, v[0], &l3, Some(weights.clone()))),
    );
    let l4 = labels.clone();
    add(
        "loss_align",
        smooth_align_inputs(rng, n, r, d, &labels, 20.0),
        Box::new(move |t, v| losses::align_on(t, v[0], &l4, v[1], 20.0)),
    );
    // A small margin keeps some hinges inactive.
    let l5 = labels;
    add(
        "loss_align[margin=1]",
        smooth_align_inputs(rng, n, r, d, &l5, 1.0),
        Box::new(move |t, v| losses::align_on(t, v[0], &l5, v[1], 1.0)),
    );
    add(
        "loss_reg[sim]",
        vec![smooth_reg_input(rng, r.max(2), d)],
        Box::new(|t, v| losses::reg_on(t, v[0], 3.0).map(|x| x.0)),
    );
    add(
        "loss_reg[div]",
        vec![smooth_reg_input(rng, r.max(2), d)],
        Box::new(|t, v| losses::reg_on(t, v[0], 3.0).map(|x| x.1)),
    );
    cases
}

pub fn suite_model_config(dims: &SuiteDims, updater: UpdaterKind, edge: bool) -> ModelConfig {
    ModelConfig {
        predicate_names: (0..dims.predicates).map(|i| format!("p{i}")).collect(),
        category_names: (0..3).map(|i| format!("c{i}")).collect(),
        d_vis: dims.d_vis,
        d_word: dims.d_word,
        d_model: dims.d_model,
        updater,
        edge_enabled: edge,
        temperature: 0.1,
    }
}

/// Distance of the alignment loss from its kinks: hinge arguments, gaps
/// between the two nearest negatives, and relation norms.
fn align_margin(relations: &Matrix, labels: &[usize], protos: &Matrix, gamma: f64) -> f64 {
    let mut margin = f64::INFINITY;
    for (j, &pos) in labels.iter().enumerate() {
        let e = relations.row(j);
        margin = margin.min(kernels::l2_norm(e));
        let mut neg: Vec<f64> = (0..protos.rows())
            .filter(|&r| r != pos)
            .map(|r| kernels::squared_distance(e, protos.row(r)))
            .collect();
        neg.sort_by(f64::total_cmp);
        if neg.len() > 1 {
            margin = margin.min(neg[1] - neg[0]);
        }
        let hinge = kernels::squared_distance(e, protos.row(pos)) - neg[0] + gamma;
        margin = margin.min(hinge.abs());
    }
    margin
}

/// Distance of the prototype regulariser from its kinks.
fn reg_margin(protos: &Matrix, gamma_div: f64) -> f64 {
    let mut margin = f64::INFINITY;
    let unit = kernels::l2_normalize_rows(protos);
    for i in 0..unit.rows() {
        margin = margin.min(kernels::l2_norm(protos.row(i)));
        let mut d: Vec<f64> = (0..unit.rows())
            .filter(|&q| q != i)
            .map(|q| kernels::squared_distance(unit.row(i), unit.row(q)))
            .collect();
        d.sort_by(f64::total_cmp);
        if d.len() > 1 {
            margin = margin.min(d[1] - d[0]);
        }
        margin = margin.min((gamma_div - d[0]).abs());
    }
    margin
}

/// Smallest distance from a point where the objective is not smooth:
/// ReLU inputs, hinge arguments, and gaps between nearest and second
/// nearest neighbours in the alignment and diversity terms.
pub fn kink_margin(model: &Model, scene: &Scene, loss: &LossConfig) -> Result<f64> {
    let pre = fusion_preactivations_of(model, scene)?;
    let mut margin = min_abs(&pre);

    let mut tape = Tape::new();
    let vars = crate::model::bind_params(&mut tape, model);
    let g = crate::model::build_graph(&mut tape, model, scene, &vars)?;
    let protos = tape.value(g.static_protos);
    if let Some(rel) = g.relations {
        margin = margin.min(align_margin(tape.value(rel), &scene.labels(), protos, loss.gamma_align));
    }
    margin = margin.min(reg_margin(protos, loss.gamma_div));
    Ok(margin)
}

/// Label of the smooth piece of the objective: ReLU activity in the fusion
/// network, nearest-negative choices and hinge activity of the alignment
/// loss, and nearest-neighbour choices and hinge activity of the
/// regulariser.
pub fn smooth_piece(
    model: &Model,
    scene: &Scene,
    loss: &LossConfig,
    static_protos: &Matrix,
    relations: Option<&Matrix>,
) -> Result<Vec<i64>> {
    let mut piece: Vec<i64> = fusion_preactivations_of(model, scene)?
        .iter()
        .map(|&z| i64::from(z > 0.0))
        .collect();
    if let Some(rel) = relations {
        for (j, &pos) in scene.labels().iter().enumerate() {
            let e = rel.row(j);
            let (neg, d_neg) = nearest_excluding(static_protos, e, pos);
            piece.push(neg as i64);
            piece.push(i64::from(
                kernels::squared_distance(e, static_protos.row(pos)) - d_neg + loss.gamma_align > 0.0,
            ));
        }
    }
    let unit = kernels::l2_normalize_rows(static_protos);
    for i in 0..unit.rows() {
        let (q, d) = nearest_excluding(&unit, unit.row(i), i);
        piece.push(q as i64);
        piece.push(i64::from(loss.gamma_div - d > 0.0));
    }
    Ok(piece)
}

fn nearest_excluding(rows: &Matrix, x: &[f64], skip: usize) -> (usize, f64) {
    (0..rows.rows())
        .filter(|&r| r != skip)
        .map(|r| (r, kernels::squared_distance(x, rows.row(r))))
        .fold(
            (usize::MAX, f64::INFINITY),
            |best, c| if c.1 < best.1 { c } else { best },
        )
}

fn fusion_preactivations_of(model: &Model, scene: &Scene) -> Result<Vec<f64>> {
    let p = &model.params;
    let subj: Vec<usize> = scene.candidates.iter().map(|c| c.subj_cat).collect();
    let obj: Vec<usize> = scene.candidates.iter().map(|c| c.obj_cat).collect();
    fusion_preactivations([
        &scene.subject_features(model.config.d_vis),
        &model.category_words.select_rows(&subj),
        &scene.object_features(model.config.d_vis),
        &model.category_words.select_rows(&obj),
        p.require("fuse.w_x")?,
        p.require("fuse.w_t")?,
        p.require("fuse.w1")?,
        p.require("fuse.b1")?,
    ])
}

/// Composite points closer than this to a kink are resampled.
pub const KINK_MARGIN: f64 = 1e-2;
const MAX_RESAMPLES: usize = 1000;

/// Full objective gradient with respect to every learnable tensor.
pub fn composite_check(
    name: &str,
    rng: &mut ChaCha8Rng,
    cfg: &SuiteConfig,
    updater: UpdaterKind,
    edge: bool,
    loss: &LossConfig,
) -> Result<GradCheckReport> {
    let dims = &cfg.dims;
    let model_cfg = suite_model_config(dims, updater, edge);
    let mut attempt = 0;
    let (model, scene) = loop {
        let mut model = Model::init(model_cfg.clone(), rng.random())?;
        // Freshly initialised biases are exactly zero; move away from that point.
        for p in model.params.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let scene = Scene::random(rng, dims.candidates, dims.predicates, 3, dims.d_vis);
        if kink_margin(&model, &scene, loss)? > KINK_MARGIN {
            break (model, scene);
        }
        attempt += 1;
        if attempt == MAX_RESAMPLES {
            return Err(Error::Numeric(format!("{name}: no smooth sample point found")));
        }
    };
    let (_, grads) = scene_gradients(&model, &scene, loss, None)?;
    let mut analytic = grads.flatten();
    inject_fault(name, &mut analytic, cfg);
    let point = model.params.flatten();
    let f = |x: &[f64]| -> Result<(f64, Vec<i64>)> {
        let mut m = model.clone();
        m.params.assign_flat(x)?;
        let mut tape = Tape::new();
        let vars = crate::model::bind_params(&mut tape, &m);
        let (total, _, g) = scene_objective(&mut tape, &m, &scene, &vars, loss, None)?;
        let relations = g.relations.map(|r| tape.value(r));
        let piece = smooth_piece(&m, &scene, loss, tape.value(g.static_protos), relations)?;
        Ok((tape.value(total).get(0, 0), piece))
    };
    grad_check_piecewise(name, f, &point, &analytic, &cfg.composite)
}

fn composite_names() -> Vec<(String, UpdaterKind, bool)> {
    let mut v: Vec<(String, UpdaterKind, bool)> = UpdaterKind::ALL
        .iter()
        .map(|&u| (format!("objective[{u},edge]"), u, true))
        .collect();
    v.push(("objective[gru,no-edge]".into(), UpdaterKind::Gru, false));
    v.push(("objective[identity,no-edge]".into(), UpdaterKind::Identity, false));
    v
}

/// Names of every check the suite runs, in order.
pub fn check_names(dims: &SuiteDims) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut names: Vec<String> = kernel_cases(&mut rng).into_iter().map(|c| c.name).collect();
    names.extend(model_cases(&mut rng, dims).into_iter().map(|c| c.name));
    names.extend(composite_names().into_iter().map(|c| c.0));
    names
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.points == 0 {
        return Err(Error::Config("gradient suite needs at least one point".into()));
    }
    if let Some(f) = &cfg.fault {
        if !check_names(&cfg.dims).contains(f) {
            return Err(Error::Config(format!("unknown check {f:?} for fault injection")));
        }
    }
    let loss = LossConfig::default();
    let mut worst: Vec<GradCheckReport> = Vec::new();
    let mut merge = |report: GradCheckReport| match worst.iter_mut().find(|w| w.op_name == report.op_name) {
        Some(w) => {
            let pass = w.pass && report.pass;
            if report.max_relative_error > w.max_relative_error {
                *w = report;
            }
            w.pass = pass;
        }
        None => worst.push(report),
    };
    let composites = composite_names();
    let jobs: Vec<(usize, Option<usize>)> = (0..cfg.points)
        .flat_map(|p| std::iter::once((p, None)).chain((0..composites.len()).map(move |c| (p, Some(c)))))
        .collect();
    let results: Vec<Result<Vec<GradCheckReport>>> = jobs
        .par_iter()
        .map(|&(point, composite)| {
            let base = cfg.seed.wrapping_mul(1_000_003).wrapping_add(point as u64);
            match composite {
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(base);
                    let mut cases = kernel_cases(&mut rng);
                    cases.extend(model_cases(&mut rng, &cfg.dims));
                    cases.iter().map(|case| run_case(case, &mut rng, cfg)).collect()
                }
                Some(c) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(base ^ ((c as u64 + 1) << 40));
                    let (name, updater, edge) = &composites[c];
                    Ok(vec![composite_check(name, &mut rng, cfg, *updater, *edge, &loss)?])
                }
            }
        })
        .collect();
    for r in results {
        for report in r? {
            merge(report);
        }
    }
    let all_pass = worst.iter().all(|r| r.pass);
    Ok(SuiteReport {
        reports: worst,
        all_pass,
    })
}
