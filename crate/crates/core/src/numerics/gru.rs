//! Gated recurrent cell, batched over rows.
//!
//! ```text
//! z  = σ(x W_izᵀ + b_iz + h W_hzᵀ + b_hz)
//! r  = σ(x W_irᵀ + b_ir + h W_hrᵀ + b_hr)
//! n  = tanh(x W_inᵀ + b_in + r ⊙ (h W_hnᵀ + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use serde::{Deserialize, Serialize};

use super::kernels::{affine, affine_backward, hadamard, sigmoid_m, tanh_m};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// The three gate weight pairs and their biases. Weights are `hidden × in`
/// (input side) and `hidden × hidden` (recurrent side); biases are 1×hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights {
    pub w_iz: Matrix,
    pub w_ir: Matrix,
    pub w_in: Matrix,
    pub w_hz: Matrix,
    pub w_hr: Matrix,
    pub w_hn: Matrix,
    pub b_iz: Matrix,
    pub b_ir: Matrix,
    pub b_in: Matrix,
    pub b_hz: Matrix,
    pub b_hr: Matrix,
    pub b_hn: Matrix,
}

pub const GRU_PARAM_NAMES: [&str; 12] = [
    "w_iz", "w_ir", "w_in", "w_hz", "w_hr", "w_hn", "b_iz", "b_ir", "b_in", "b_hz", "b_hr", "b_hn",
];

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wi = || Matrix::zeros(hidden, input);
        let wh = || Matrix::zeros(hidden, hidden);
        let b = || Matrix::zeros(1, hidden);
        Self {
            w_iz: wi(),
            w_ir: wi(),
            w_in: wi(),
            w_hz: wh(),
            w_hr: wh(),
            w_hn: wh(),
            b_iz: b(),
            b_ir: b(),
            b_in: b(),
            b_hz: b(),
            b_hr: b(),
            b_hn: b(),
        }
    }

    /// Builds from twelve matrices in [`GRU_PARAM_NAMES`] order.
    pub fn from_parts(parts: [Matrix; 12]) -> Self {
        let [w_iz, w_ir, w_in, w_hz, w_hr, w_hn, b_iz, b_ir, b_in, b_hz, b_hr, b_hn] = parts;
        Self {
            w_iz,
            w_ir,
            w_in,
            w_hz,
            w_hr,
            w_hn,
            b_iz,
            b_ir,
            b_in,
            b_hz,
            b_hr,
            b_hn,
        }
    }

    pub fn into_parts(self) -> [Matrix; 12] {
        [
            self.w_iz, self.w_ir, self.w_in, self.w_hz, self.w_hr, self.w_hn, self.b_iz, self.b_ir, self.b_in,
            self.b_hz, self.b_hr, self.b_hn,
        ]
    }

    pub fn hidden(&self) -> usize {
        self.w_hz.rows()
    }

    pub fn input(&self) -> usize {
        self.w_iz.cols()
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub z: Matrix,
    pub r: Matrix,
    pub n: Matrix,
    /// `h W_hnᵀ + b_hn`
    pub hn: Matrix,
}

/// One cell step for every row of `input`/`hidden`.
pub fn gru_cell(input: &Matrix, hidden: &Matrix, w: &GruWeights) -> Result<Matrix> {
    gru_cell_cached(input, hidden, w).map(|(out, _)| out)
}

pub fn gru_cell_cached(input: &Matrix, hidden: &Matrix, w: &GruWeights) -> Result<(Matrix, GruCache)> {
    if input.rows() != hidden.rows() || hidden.cols() != w.hidden() || input.cols() != w.input() {
        return Err(Error::Dimension {
            op: "gru_cell",
            lhs: input.shape(),
            rhs: hidden.shape(),
        });
    }
    let z = sigmoid_m(&add3(
        &affine(input, &w.w_iz, &w.b_iz)?,
        &affine(hidden, &w.w_hz, &w.b_hz)?,
    ));
    let r = sigmoid_m(&add3(
        &affine(input, &w.w_ir, &w.b_ir)?,
        &affine(hidden, &w.w_hr, &w.b_hr)?,
    ));
    let hn = affine(hidden, &w.w_hn, &w.b_hn)?;
    let n = tanh_m(&add3(&affine(input, &w.w_in, &w.b_in)?, &hadamard(&r, &hn)?));
    let out = Matrix::from_fn(hidden.rows(), hidden.cols(), |i, j| {
        let zv = z.get(i, j);
        (1.0 - zv) * n.get(i, j) + zv * hidden.get(i, j)
    });
    Ok((out, GruCache { z, r, n, hn }))
}

fn add3(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    out.add_assign(b);
    out
}

/// Gradients of a cell step with respect to input, hidden state and weights.
pub fn gru_cell_backward(
    input: &Matrix,
    hidden: &Matrix,
    w: &GruWeights,
    cache: &GruCache,
    grad: &Matrix,
) -> Result<(Matrix, Matrix, GruWeights)> {
    let GruCache { z, r, n, hn } = cache;
    let (rows, d) = hidden.shape();
    let mut d_hidden = Matrix::zeros(rows, d);
    let mut d_az = Matrix::zeros(rows, d);
    let mut d_an = Matrix::zeros(rows, d);
    for i in 0..rows {
        for j in 0..d {
            let g = grad.get(i, j);
            let (zv, nv) = (z.get(i, j), n.get(i, j));
            d_hidden.set(i, j, g * zv);
            d_az.set(i, j, g * (hidden.get(i, j) - nv) * zv * (1.0 - zv));
            d_an.set(i, j, g * (1.0 - zv) * (1.0 - nv * nv));
        }
    }
    let d_hn = hadamard(&d_an, r)?;
    let d_ar = Matrix::from_fn(rows, d, |i, j| {
        let rv = r.get(i, j);
        d_an.get(i, j) * hn.get(i, j) * rv * (1.0 - rv)
    });

    let mut d_input = Matrix::zeros(rows, input.cols());
    let mut gw = GruWeights::zeros(input.cols(), d);

    let (gx, gwi, gbi) = affine_backward(input, &w.w_iz, &d_az)?;
    d_input.add_assign(&gx);
    gw.w_iz = gwi;
    gw.b_iz = gbi;
    let (gh, gwh, gbh) = affine_backward(hidden, &w.w_hz, &d_az)?;
    d_hidden.add_assign(&gh);
    gw.w_hz = gwh;
    gw.b_hz = gbh;

    let (gx, gwi, gbi) = affine_backward(input, &w.w_ir, &d_ar)?;
    d_input.add_assign(&gx);
    gw.w_ir = gwi;
    gw.b_ir = gbi;
    let (gh, gwh, gbh) = affine_backward(hidden, &w.w_hr, &d_ar)?;
    d_hidden.add_assign(&gh);
    gw.w_hr = gwh;
    gw.b_hr = gbh;

    let (gx, gwi, gbi) = affine_backward(input, &w.w_in, &d_an)?;
    d_input.add_assign(&gx);
    gw.w_in = gwi;
    gw.b_in = gbi;
    let (gh, gwh, gbh) = affine_backward(hidden, &w.w_hn, &d_hn)?;
    d_hidden.add_assign(&gh);
    gw.w_hn = gwh;
    gw.b_hn = gbh;

    Ok((d_input, d_hidden, gw))
}
