//! Dense 64-bit kernels, their backward passes, a reverse-mode tape and
//! the finite-difference checker that validates them.

pub mod flops;
pub mod gradcheck;
pub mod gru;
pub mod kernels;
mod matrix;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_piecewise, GradCheckConfig, GradCheckReport, Stencil};
pub use gru::{gru_cell, GruWeights};
pub use kernels::{
    affine, concat, cosine, l2_normalize_rows, layer_norm, layer_norm_rows, matmul, softmax_rows, squared_distance,
};
pub use matrix::Matrix;
pub use tape::{Tape, Var};
