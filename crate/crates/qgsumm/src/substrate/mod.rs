//! Numeric substrate: tensors, reverse-mode differentiation, elementary
//! neural ops, the Adam optimizer, and the finite-difference oracle.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod gumbel;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Graph, Var};
pub use gumbel::{argmax, gumbel_softmax_st, GumbelSample};
pub use params::{bind, harvest, Param, ParamStore};
pub use tensor::Tensor;
