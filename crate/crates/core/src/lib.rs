//! Duration modelling for non-autoregressive text-to-speech.
//!
//! Two duration models share one convolutional backbone:
//!
//! * **DET** regresses log-durations with a mean-squared error and always
//!   returns the conditional mean.
//! * **FM** learns a flow-matching vector field over log-durations and
//!   samples by Euler-integrating Gaussian noise, then rounding to frames.
//!
//! Everything runs on a small reverse-mode autodiff core ([`numerics`]) and
//! is trained on synthetic read-style or spontaneous-style corpora
//! ([`data`]).

pub mod data;
pub mod duration;
pub mod encoder;
mod error;
pub mod eval;
pub mod nn;
pub mod numerics;
pub mod train;

pub use data::{CorpusSpec, DurationCorpus, Style};
pub use duration::{DurationModel, LogDurations, ModelConfig, ModelKind, SampleOptions};
pub use encoder::{ConditioningSequence, PhoneSequence, Vocabulary};
pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
pub use train::{train, LrSchedule, TrainConfig, TrainLog};
