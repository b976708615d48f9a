use super::ops::{
    adapt_on, cosine_logits_on, cross_attention_on, fuse_on, recalibrate_on, similarity_shift, static_prototypes_on,
    Classification, FusionVars, RecalVars,
};
use super::Model;
use crate::data::Scene;
use crate::error::{Error, Result};
use crate::numerics::{flops, Matrix, Tape, Var};

/// Tape leaves for every learnable tensor, aligned with the model's
/// [`ParamSet`](super::ParamSet) order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Vars in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub fn bind_params(tape: &mut Tape, model: &Model) -> ParamVars {
    let mut names = Vec::with_capacity(model.params.len());
    let mut vars = Vec::with_capacity(model.params.len());
    for p in model.params.iter() {
        names.push(p.name.clone());
        vars.push(tape.leaf(p.value.clone()));
    }
    ParamVars { names, vars }
}

/// Handles to the intermediate values of one image's forward pass.
#[derive(Debug, Clone)]
pub struct GraphOutputs {
    pub static_protos: Var,
    /// Absent for images without candidates.
    pub embeddings: Option<Var>,
    /// Context signal and its attention weights (`R × N`).
    pub context: Option<(Var, Var)>,
    pub adapted: Var,
    /// Feedback signal and its attention weights (`N × R`).
    pub feedback: Option<(Var, Var)>,
    /// Embeddings the classifier reads: recalibrated, or raw when the
    /// recalibration path is disabled.
    pub relations: Option<Var>,
    pub logits: Option<Var>,
    /// Multiply-adds spent in adaptation and recalibration.
    pub feedback_multiply_adds: u64,
}

/// Records one image's forward pass on `tape`.
pub fn build_graph(tape: &mut Tape, model: &Model, scene: &Scene, params: &ParamVars) -> Result<GraphOutputs> {
    let cfg = &model.config;
    let words = tape.leaf(model.predicate_words.clone());
    let static_protos = static_prototypes_on(tape, params.get("proto.proj")?, words)?;

    if scene.is_empty() {
        return Ok(GraphOutputs {
            static_protos,
            embeddings: None,
            context: None,
            adapted: static_protos,
            feedback: None,
            relations: None,
            logits: None,
            feedback_multiply_adds: 0,
        });
    }

    let subj_cats: Vec<usize> = scene.candidates.iter().map(|c| c.subj_cat).collect();
    let obj_cats: Vec<usize> = scene.candidates.iter().map(|c| c.obj_cat).collect();
    if let Some(bad) = subj_cats.iter().chain(&obj_cats).find(|&&c| c >= cfg.num_categories()) {
        return Err(Error::Data(format!(
            "scene {}: no word vector for category index {bad}",
            scene.scene_id
        )));
    }
    let sf = tape.leaf(scene.subject_features(cfg.d_vis));
    let sw = tape.leaf(model.category_words.select_rows(&subj_cats));
    let of = tape.leaf(scene.object_features(cfg.d_vis));
    let ow = tape.leaf(model.category_words.select_rows(&obj_cats));
    let fusion = FusionVars {
        w_x: params.get("fuse.w_x")?,
        w_t: params.get("fuse.w_t")?,
        w1: params.get("fuse.w1")?,
        b1: params.get("fuse.b1")?,
        w2: params.get("fuse.w2")?,
        b2: params.get("fuse.b2")?,
    };
    let embeddings = fuse_on(tape, sf, sw, of, ow, fusion)?;

    let before = flops::read();
    let (context, adapted) = if cfg.updater == super::UpdaterKind::Identity {
        (None, static_protos)
    } else {
        let (u, weights) = cross_attention_on(
            tape,
            static_protos,
            embeddings,
            params.get("ctx.w_q")?,
            params.get("ctx.w_k")?,
            params.get("ctx.w_v")?,
        )?;
        let upd = bind_updater_vars(model, params)?;
        let adapted = adapt_on(tape, static_protos, u, &upd)?;
        (Some((u, weights)), adapted)
    };

    let (feedback, relations) = if cfg.edge_enabled {
        let (u, weights) = cross_attention_on(
            tape,
            embeddings,
            adapted,
            params.get("fb.w_q")?,
            params.get("fb.w_k")?,
            params.get("fb.w_v")?,
        )?;
        let recal = RecalVars {
            gain: params.get("recal.ln.gain")?,
            bias: params.get("recal.ln.bias")?,
            w: params.get("recal.w")?,
            b: params.get("recal.b")?,
        };
        let relations = recalibrate_on(tape, embeddings, u, recal)?;
        (Some((u, weights)), relations)
    } else {
        (None, embeddings)
    };
    let feedback_multiply_adds = flops::read() - before;

    let logits = cosine_logits_on(tape, relations, static_protos, cfg.temperature)?;
    Ok(GraphOutputs {
        static_protos,
        embeddings: Some(embeddings),
        context,
        adapted,
        feedback,
        relations: Some(relations),
        logits: Some(logits),
        feedback_multiply_adds,
    })
}

/// Looks up the updater's tensors among the bound parameter leaves.
fn bind_updater_vars(model: &Model, params: &ParamVars) -> Result<super::ops::UpdaterVars> {
    use super::ops::UpdaterVars;
    use super::UpdaterKind;
    Ok(match model.config.updater {
        UpdaterKind::Identity => UpdaterVars::Identity,
        UpdaterKind::PlainAdd => UpdaterVars::PlainAdd,
        UpdaterKind::Gru => {
            let mut weights = Vec::with_capacity(12);
            for n in crate::numerics::gru::GRU_PARAM_NAMES {
                weights.push(params.get(&format!("upd.gru.{n}"))?);
            }
            UpdaterVars::Gru {
                gain: params.get("upd.ln.gain")?,
                bias: params.get("upd.ln.bias")?,
                weights: weights.try_into().expect("twelve gru tensors"),
            }
        }
        UpdaterKind::Concat => UpdaterVars::Concat {
            w: params.get("upd.w")?,
            b: params.get("upd.b")?,
        },
        UpdaterKind::Residual => UpdaterVars::Residual {
            w: params.get("upd.w_res")?,
        },
        UpdaterKind::Ema => UpdaterVars::Ema {
            alpha: params.get("upd.alpha")?,
        },
    })
}

/// Everything one image's forward pass produces.
#[derive(Debug, Clone)]
pub struct ImageOutput {
    pub static_protos: Matrix,
    pub adapted: Matrix,
    pub embeddings: Matrix,
    pub relations: Matrix,
    pub classification: Classification,
    pub context_weights: Option<Matrix>,
    pub feedback_weights: Option<Matrix>,
    /// `Δ[r, r'] = cos(p_r^(I), p_r'^(I)) − cos(p̄_r, p̄_r')`
    pub similarity_shift: Matrix,
    pub feedback_multiply_adds: u64,
}

impl ImageOutput {
    pub fn logits(&self) -> &Matrix {
        &self.classification.logits
    }

    /// Mean ℓ2 distance between adapted and static prototypes.
    pub fn drift(&self) -> f64 {
        let r = self.static_protos.rows();
        let total: f64 = (0..r)
            .map(|i| crate::numerics::squared_distance(self.adapted.row(i), self.static_protos.row(i)).sqrt())
            .sum();
        total / r as f64
    }
}

pub fn forward_image(model: &Model, scene: &Scene) -> Result<ImageOutput> {
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, model);
    let g = build_graph(&mut tape, model, scene, &params)?;
    let r = model.config.num_predicates();
    let d = model.config.d_model;
    let static_protos = tape.value(g.static_protos).clone();
    let adapted = tape.value(g.adapted).clone();
    let value_or = |v: Option<Var>, rows: usize, cols: usize| match v {
        Some(v) => tape.value(v).clone(),
        None => Matrix::zeros(rows, cols),
    };
    let embeddings = value_or(g.embeddings, 0, d);
    let relations = value_or(g.relations, 0, d);
    let logits = value_or(g.logits, 0, r);
    let similarity_shift = similarity_shift(&static_protos, &adapted)?;
    Ok(ImageOutput {
        classification: Classification::from_logits(logits)?,
        context_weights: g.context.map(|(_, w)| tape.value(w).clone()),
        feedback_weights: g.feedback.map(|(_, w)| tape.value(w).clone()),
        static_protos,
        adapted,
        embeddings,
        relations,
        similarity_shift,
        feedback_multiply_adds: g.feedback_multiply_adds,
    })
}
