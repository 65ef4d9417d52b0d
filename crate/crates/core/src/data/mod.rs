//! Synthetic read-style and spontaneous-style duration corpora.

mod corpus;
pub mod io;
mod spec;

pub use corpus::{generate, generate_split, CorpusPair, CorpusSummary, DurationCorpus, Sentence, Split};
pub use spec::{
    read_class_mean, CorpusSpec, DurationLaw, Insertion, LogNormalMode, Style, VALIDATION_SENTENCES,
};
