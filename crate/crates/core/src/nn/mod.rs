//! Minimal tensor, autodiff and optimizer substrate.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, NodeId, LN_EPS};
pub use layers::{sinusoidal, Activation, Dense, LayerNorm, Mlp, MultiHeadAttention, TransformerBlock};
pub use params::{ParamId, ParamRegistry};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
