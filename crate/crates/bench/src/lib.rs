//! Shared fixtures for the criterion benches.

use durflow::data::{generate_split, Split};
use durflow::{CorpusSpec, DurationCorpus, DurationModel, ModelConfig, ModelKind, Style, Tensor};

/// A desk-scale model with fresh weights. Timings do not depend on training.
pub fn model(kind: ModelKind) -> DurationModel {
    let spec = CorpusSpec::default_for(Style::Read, 0);
    let mut m = DurationModel::new(ModelConfig::desk_scale(kind, spec.num_phones)).expect("valid config");
    m.add_trained_steps(1);
    m
}

/// `n` read-style validation sentences.
pub fn corpus(n: usize) -> DurationCorpus {
    let spec = CorpusSpec::default_for(Style::Read, 0);
    generate_split(&spec, Split::Validation, n).expect("valid spec")
}

/// Deterministic pseudo-random entries in [-1, 1).
pub fn tensor(shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919 + 13) % 1000) as f64 / 500.0 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
