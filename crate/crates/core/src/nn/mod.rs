//! Layers, parameter storage, the Adam optimizer and checkpoints.

mod adam;
pub mod checkpoint;
mod layers;
mod params;

pub use adam::Adam;
pub use layers::{dropout, maxpool_1xk, BatchNorm, Conv1xW, Embedding, LayerNorm, Linear, MultiHeadAttention};
pub use params::{normal, uniform, Ctx, Grads, Mode, ParamId, ParamStore};
