//! Duration modelling: the deterministic log-MSE predictor, the OT-CFM
//! flow-matching model, Euler sampling, rounding to frames and length
//! regulation.

mod batch;
mod flow;
mod model;
mod targets;

pub use batch::{encode_sentences, index_keys, predict_sentences, CHUNK};
pub(crate) use flow::draw_flow_spans;
pub use flow::{
    cfm_pair, det_forward, det_loss, draw_flow, fm_loss, fm_sample, FlowDraw, SampleOptions, VectorField, SIGMA_MIN,
};
pub use model::{DurationModel, ModelConfig, ModelKind};
pub use targets::{
    length_regulate, log_target, quantisation_residual, to_frames, LogDurations, ZERO_DURATION_FLOOR,
};
