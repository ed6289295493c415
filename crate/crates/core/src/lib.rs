//! Sub-trajectory stitching for offline goal-conditioned RL: a
//! value-conditioned trajectory diffusion planner trained jointly with a
//! multi-step goal-chaining critic, on a continuous point-mass maze.

pub mod critic;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod gamdp;
pub mod harness;
pub mod io_util;
pub mod maze;
pub mod nn;
pub mod planner;
pub mod relabel;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = nn::Tensor<f32>;
pub type ParamRegistry = nn::ParamRegistry<f32>;
