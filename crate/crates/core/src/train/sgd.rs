use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Momentum SGD with coupled weight decay:
/// `g' = g + wd·θ; buf = μ·buf + g'; θ -= lr·buf`.
/// Parameters with `decay == false` skip the decay term.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    buffers: &mut ParamSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(buffers) {
        return Err(Error::Config("optimizer state does not match parameters".into()));
    }
    if let Some(bad) = grads.iter().find(|g| !g.value.is_finite()) {
        return Err(Error::Numeric(format!("gradient of {}", bad.name)));
    }
    for ((p, g), buf) in params.iter_mut().zip(grads.iter()).zip(buffers.iter_mut()) {
        let wd = if p.decay { weight_decay } else { 0.0 };
        for ((theta, grad), b) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.value.data())
            .zip(buf.value.data_mut())
        {
            let step = grad + wd * *theta;
            *b = momentum * *b + step;
            *theta -= lr * *b;
        }
    }
    Ok(())
}
