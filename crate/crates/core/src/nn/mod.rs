//! Parameterised layers, the duration-predictor backbone and the
//! checkpoint container.

mod backbone;
mod checkpoint;
mod layers;

pub use backbone::Backbone;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{
    param_count, sinusoidal_encoding, Conv1d, Embedding, LayerKind, LayerNorm, LayerSpec, Linear, TimeEmbedding,
    LAYER_NORM_EPS, TIME_HIDDEN_MULT, TIME_SCALE,
};
