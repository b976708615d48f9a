//! Dense kernels with their vector-Jacobian products.
//!
//! Row convention: a batch of vectors is a matrix with one vector per row.
//! Weight matrices are stored `out × in`, so an affine layer maps a batch
//! `X` to `X Wᵀ + b`. Every reduction runs left to right over row-major
//! storage, which keeps results bit-identical across runs.

use super::flops;
use super::matrix::Matrix;
use crate::error::{Error, Result};

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    flops::record((m * k * n) as u64);
    Ok(out)
}

/// Gradients of `a · b` with respect to `a` and `b`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    let ga = matmul(grad, &b.transpose())?;
    let gb = matmul(&a.transpose(), grad)?;
    Ok((ga, gb))
}

pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same("add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

pub fn sub(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same("sub", a, b)?;
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) - b.get(i, j)))
}

/// Elementwise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same("hadamard", a, b)?;
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) * b.get(i, j)))
}

/// Adds the 1×c row `bias` to every row of `x`.
pub fn add_row(x: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows() != 1 || bias.cols() != x.cols() {
        return Err(Error::Dimension {
            op: "add_row",
            lhs: x.shape(),
            rhs: bias.shape(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_m(x: &Matrix) -> Matrix {
    x.map(sigmoid)
}

/// Backward of sigmoid expressed through its output `y`.
pub fn sigmoid_backward(y: &Matrix, grad: &Matrix) -> Matrix {
    Matrix::from_fn(y.rows(), y.cols(), |i, j| {
        let s = y.get(i, j);
        grad.get(i, j) * s * (1.0 - s)
    })
}

pub fn tanh_m(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// Backward of tanh expressed through its output `y`.
pub fn tanh_backward(y: &Matrix, grad: &Matrix) -> Matrix {
    Matrix::from_fn(y.rows(), y.cols(), |i, j| {
        let t = y.get(i, j);
        grad.get(i, j) * (1.0 - t * t)
    })
}

pub fn relu_m(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Backward of relu expressed through its input `x`; the kink gets zero.
pub fn relu_backward(x: &Matrix, grad: &Matrix) -> Matrix {
    Matrix::from_fn(
        x.rows(),
        x.cols(),
        |i, j| {
            if x.get(i, j) > 0.0 {
                grad.get(i, j)
            } else {
                0.0
            }
        },
    )
}

/// `[a | b]` along columns.
pub fn concat_cols(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension {
            op: "concat_cols",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (ca, cb) = (a.cols(), b.cols());
    Ok(Matrix::from_fn(a.rows(), ca + cb, |i, j| {
        if j < ca {
            a.get(i, j)
        } else {
            b.get(i, j - ca)
        }
    }))
}

/// Splits the gradient of `[a | b]` back into the two blocks.
pub fn concat_cols_backward(left_cols: usize, grad: &Matrix) -> (Matrix, Matrix) {
    let right_cols = grad.cols() - left_cols;
    let ga = Matrix::from_fn(grad.rows(), left_cols, |i, j| grad.get(i, j));
    let gb = Matrix::from_fn(grad.rows(), right_cols, |i, j| grad.get(i, j + left_cols));
    (ga, gb)
}

/// Vector concatenation.
pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    if logits.cols() == 0 {
        return Err(Error::Degenerate("softmax_rows"));
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Backward of [`softmax_rows`] through its output `y`.
pub fn softmax_rows_backward(y: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row(i), grad.row(i));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (o, (yv, gv)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
            *o = yv * (gv - dot);
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalisation of one vector.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let xm = Matrix::row_vector(x);
    let out = layer_norm_rows(&xm, &Matrix::row_vector(gain), &Matrix::row_vector(bias), epsilon)?;
    Ok(out.into_data())
}

/// Layer normalisation applied independently to each row; `gain` and
/// `bias` are 1×c.
pub fn layer_norm_rows(x: &Matrix, gain: &Matrix, bias: &Matrix, epsilon: f64) -> Result<Matrix> {
    let c = x.cols();
    if gain.shape() != (1, c) || bias.shape() != (1, c) {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape(),
            rhs: gain.shape(),
        });
    }
    if c == 0 {
        return Err(Error::Degenerate("layer_norm"));
    }
    let mut out = Matrix::zeros(x.rows(), c);
    for i in 0..x.rows() {
        let row = x.row(i);
        let (mean, inv_std) = moments(row, epsilon);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gain.data()[j] * (row[j] - mean) * inv_std + bias.data()[j];
        }
    }
    Ok(out)
}

fn moments(row: &[f64], epsilon: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + epsilon).sqrt())
}

/// Gradients of [`layer_norm_rows`] with respect to input, gain and bias.
pub fn layer_norm_rows_backward(x: &Matrix, gain: &Matrix, epsilon: f64, grad: &Matrix) -> (Matrix, Matrix, Matrix) {
    let c = x.cols();
    let n = c as f64;
    let mut gx = Matrix::zeros(x.rows(), c);
    let mut ggain = vec![0.0; c];
    let mut gbias = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut gxhat = vec![0.0; c];
    for i in 0..x.rows() {
        let row = x.row(i);
        let g = grad.row(i);
        let (mean, inv_std) = moments(row, epsilon);
        for j in 0..c {
            xhat[j] = (row[j] - mean) * inv_std;
            gxhat[j] = g[j] * gain.data()[j];
            ggain[j] += g[j] * xhat[j];
            gbias[j] += g[j];
        }
        let sum_g: f64 = gxhat.iter().sum();
        let sum_gx: f64 = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
            *o = inv_std * (gxhat[j] - sum_g / n - xhat[j] * sum_gx / n);
        }
    }
    (gx, Matrix::row_vector(&ggain), Matrix::row_vector(&gbias))
}

/// Affine map of a batch: `x Wᵀ + b`, with `weight` stored `out × in`.
pub fn affine(x: &Matrix, weight: &Matrix, bias: &Matrix) -> Result<Matrix> {
    add_row(&matmul(x, &weight.transpose())?, bias)
}

/// Gradients of [`affine`] with respect to input, weight and bias.
pub fn affine_backward(x: &Matrix, weight: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let gx = matmul(grad, weight)?;
    let gw = matmul(&grad.transpose(), x)?;
    Ok((gx, gw, grad.col_sums()))
}

/// Scales each row to unit ℓ2 norm. All-zero rows stay zero.
pub fn l2_normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

/// Backward of [`l2_normalize_rows`]; zero rows pass no gradient.
pub fn l2_normalize_rows_backward(x: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let g = grad.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let dot: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = (g[j] - row[j] / norm * dot) / norm;
        }
    }
    out
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gradient of the squared distance with respect to `a`; the gradient for
/// `b` is its negation.
pub fn squared_distance_backward(a: &[f64], b: &[f64], grad: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 2.0 * grad * (x - y)).collect()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Gradients of [`cosine`] with respect to `a` and `b`.
pub fn cosine_backward(a: &[f64], b: &[f64], grad: f64) -> (Vec<f64>, Vec<f64>) {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = cosine(a, b);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| grad * (y / (na * nb) - c * x / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| grad * (x / (na * nb) - c * y / (nb * nb)))
        .collect();
    (ga, gb)
}
