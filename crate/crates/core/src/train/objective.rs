use rayon::prelude::*;

use crate::data::Scene;
use crate::error::Result;
use crate::losses::{align_on, cls_on, reg_on, LossBreakdown, LossConfig};
use crate::model::{bind_params, build_graph, GraphOutputs, Model, ParamSet, ParamVars};
use crate::numerics::{Tape, Var};

/// One scene's objective recorded on `tape`. Terms whose weight is zero
/// are left out of the graph; images without candidates contribute only
/// the prototype regulariser.
pub fn scene_objective(
    tape: &mut Tape,
    model: &Model,
    scene: &Scene,
    params: &ParamVars,
    loss: &LossConfig,
    class_weights: Option<&[f64]>,
) -> Result<(Var, LossBreakdown, GraphOutputs)> {
    let g = build_graph(tape, model, scene, params)?;
    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Var> = None;
    let mut accumulate = |tape: &mut Tape, term: Var, weight: f64| -> Result<()> {
        let scaled = if weight == 1.0 { term } else { tape.scale(term, weight) };
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
        Ok(())
    };

    if let (Some(logits), Some(relations)) = (g.logits, g.relations) {
        let labels = scene.labels();
        let cls = cls_on(tape, logits, &labels, class_weights.map(<[f64]>::to_vec))?;
        breakdown.cls = tape.value(cls).get(0, 0);
        accumulate(tape, cls, 1.0)?;
        if loss.lambda_align != 0.0 {
            let align = align_on(tape, relations, &labels, g.static_protos, loss.gamma_align)?;
            breakdown.align = tape.value(align).get(0, 0);
            accumulate(tape, align, loss.lambda_align)?;
        }
    }
    if loss.lambda_sim != 0.0 || loss.lambda_div != 0.0 {
        let (sim, div) = reg_on(tape, g.static_protos, loss.gamma_div)?;
        breakdown.reg_sim = tape.value(sim).get(0, 0);
        breakdown.reg_div = tape.value(div).get(0, 0);
        if loss.lambda_sim != 0.0 {
            accumulate(tape, sim, loss.lambda_sim)?;
        }
        if loss.lambda_div != 0.0 {
            accumulate(tape, div, loss.lambda_div)?;
        }
    }
    let total = match total {
        Some(t) => t,
        None => tape.leaf(crate::numerics::Matrix::scalar(0.0)),
    };
    breakdown.total = tape.value(total).get(0, 0);
    Ok((total, breakdown, g))
}

/// Objective value and parameter gradients for one scene.
pub fn scene_gradients(
    model: &Model,
    scene: &Scene,
    loss: &LossConfig,
    class_weights: Option<&[f64]>,
) -> Result<(LossBreakdown, ParamSet)> {
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, model);
    let (total, breakdown, _) = scene_objective(&mut tape, model, scene, &params, loss, class_weights)?;
    let grads = tape.backward(total)?;
    let mut out = model.params.zeros_like();
    for (p, v) in out.iter_mut().zip(params.vars()) {
        if let Some(g) = grads.get(*v) {
            p.value = g.clone();
        }
    }
    Ok((breakdown, out))
}

/// Mean objective and gradients over `scenes`. Scenes are processed in
/// parallel and reduced in index order, so the result does not depend on
/// the thread count.
pub fn batch_gradients(
    model: &Model,
    scenes: &[&Scene],
    loss: &LossConfig,
    class_weights: Option<&[f64]>,
) -> Result<(LossBreakdown, ParamSet)> {
    let per_scene: Vec<Result<(LossBreakdown, ParamSet)>> = scenes
        .par_iter()
        .map(|s| scene_gradients(model, s, loss, class_weights))
        .collect();
    let n = scenes.len().max(1) as f64;
    let mut mean = LossBreakdown::default();
    let mut grads = model.params.zeros_like();
    for item in per_scene {
        let (b, g) = item?;
        mean.cls += b.cls;
        mean.reg_sim += b.reg_sim;
        mean.reg_div += b.reg_div;
        mean.align += b.align;
        mean.total += b.total;
        for (acc, p) in grads.iter_mut().zip(g.iter()) {
            acc.value.add_assign(&p.value);
        }
    }
    for v in [
        &mut mean.cls,
        &mut mean.reg_sim,
        &mut mean.reg_div,
        &mut mean.align,
        &mut mean.total,
    ] {
        *v /= n;
    }
    for p in grads.iter_mut() {
        p.value = p.value.scale(1.0 / n);
    }
    Ok((mean, grads))
}
