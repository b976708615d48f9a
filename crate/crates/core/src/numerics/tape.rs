//! A small reverse-mode tape over [`Matrix`] values.
//!
//! Only the operations the model needs are recorded; each one dispatches
//! its backward pass to the matching kernel VJP in [`super::kernels`].
//! Losses with bespoke gradients enter through [`Tape::custom`].

use super::gru::{gru_cell_backward, gru_cell_cached, GruCache, GruWeights};
use super::kernels as k;
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type CustomBackward = Box<dyn Fn(&Matrix) -> Vec<Matrix> + Send + Sync>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    NormalizeRows(Var),
    Gru {
        input: Var,
        hidden: Var,
        weights: [Var; 12],
        cache: Box<GruCache>,
    },
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = k::add_row(self.value(x), self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = k::sigmoid_m(self.value(a));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = k::tanh_m(self.value(a));
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = k::relu_m(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = k::concat_cols(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = k::softmax_rows(self.value(a))?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let v = k::layer_norm_rows(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let v = k::l2_normalize_rows(self.value(a));
        self.push(v, Op::NormalizeRows(a))
    }

    /// `x Wᵀ + b` with `weight` stored `out × in`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let wt = self.transpose(weight);
        let xw = self.matmul(x, wt)?;
        self.add_row(xw, bias)
    }

    /// `x Wᵀ` without bias.
    pub fn linear(&mut self, x: Var, weight: Var) -> Result<Var> {
        let wt = self.transpose(weight);
        self.matmul(x, wt)
    }

    pub fn gru(&mut self, input: Var, hidden: Var, weights: [Var; 12]) -> Result<Var> {
        let w = self.gru_weights(&weights);
        let (v, cache) = gru_cell_cached(self.value(input), self.value(hidden), &w)?;
        Ok(self.push(
            v,
            Op::Gru {
                input,
                hidden,
                weights,
                cache: Box::new(cache),
            },
        ))
    }

    fn gru_weights(&self, weights: &[Var; 12]) -> GruWeights {
        GruWeights::from_parts(weights.map(|v| self.value(v).clone()))
    }

    /// Records a node whose value was computed by the caller. `backward`
    /// maps the upstream gradient to one gradient per input, in order.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Matrix, backward: CustomBackward) -> Var {
        self.push(value, Op::Custom { inputs, backward })
    }

    /// Reverse sweep from the 1×1 node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "Tape::backward",
                lhs: self.value(output).shape(),
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |v: Var, contribution: Matrix| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ga, gb) = k::matmul_backward(self.value(*a), self.value(*b), &g)?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    send(*a, k::hadamard(&g, self.value(*b))?);
                    send(*b, k::hadamard(&g, self.value(*a))?);
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::AddRow(x, b) => {
                    send(*b, g.col_sums());
                    send(*x, g.clone());
                }
                Op::Sigmoid(a) => send(*a, k::sigmoid_backward(&node.value, &g)),
                Op::Tanh(a) => send(*a, k::tanh_backward(&node.value, &g)),
                Op::Relu(a) => send(*a, k::relu_backward(self.value(*a), &g)),
                Op::ConcatCols(a, b) => {
                    let (ga, gb) = k::concat_cols_backward(self.value(*a).cols(), &g);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::SoftmaxRows(a) => send(*a, k::softmax_rows_backward(&node.value, &g)),
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (gx, gg, gb) = k::layer_norm_rows_backward(self.value(*x), self.value(*gain), *eps, &g);
                    send(*x, gx);
                    send(*gain, gg);
                    send(*bias, gb);
                }
                Op::NormalizeRows(a) => send(*a, k::l2_normalize_rows_backward(self.value(*a), &g)),
                Op::Gru {
                    input,
                    hidden,
                    weights,
                    cache,
                } => {
                    let w = self.gru_weights(weights);
                    let (gi, gh, gw) = gru_cell_backward(self.value(*input), self.value(*hidden), &w, cache, &g)?;
                    send(*input, gi);
                    send(*hidden, gh);
                    for (v, gm) in weights.iter().zip(gw.into_parts()) {
                        send(*v, gm);
                    }
                }
                Op::Custom { inputs, backward } => {
                    for (v, gm) in inputs.iter().zip(backward(&g)) {
                        send(*v, gm);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`]; nodes the output does not
/// depend on report zeros.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}
