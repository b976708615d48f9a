//! Predicate classification with context-conditioned prototypes.
//!
//! Each image's relation candidates adapt a bank of static predicate
//! prototypes through cross-attention and a gated update; the adapted
//! prototypes then feed back into the relation embeddings before they are
//! classified against the static anchors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::Matrix;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod gradsuite;
pub mod losses;
pub mod model;
pub mod train;
