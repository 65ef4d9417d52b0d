use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::CorpusSpec;
use crate::encoder::PhoneSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    /// Offset separating the noise streams of the two splits.
    fn stream_base(self) -> u64 {
        match self {
            Self::Train => 0,
            Self::Validation => 1 << 40,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "valid" => Some(Self::Validation),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Validation => "valid",
        })
    }
}

/// One sentence: blank-interleaved token ids and a frame count per id.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub phones: PhoneSequence,
    pub durations: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationCorpus {
    pub spec: CorpusSpec,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusPair {
    pub train: DurationCorpus,
    pub validation: DurationCorpus,
}

/// Token counts and spread of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSummary {
    pub sentences: usize,
    pub positions: usize,
    pub phones: usize,
    pub pauses: usize,
    pub fillers: usize,
    pub total_frames: u64,
    /// Standard deviation over all non-blank positions.
    pub pooled_std: f64,
}

/// Generates the training and validation splits of `spec`.
pub fn generate(spec: &CorpusSpec) -> Result<CorpusPair> {
    spec.validate()?;
    Ok(CorpusPair {
        train: generate_split(spec, Split::Train, spec.num_sentences)?,
        validation: generate_split(spec, Split::Validation, spec.validation_sentences)?,
    })
}

/// Generates `count` sentences of one split. Sentence `i` draws from its
/// own stream of the spec seed, so any prefix is reproducible on its own.
pub fn generate_split(spec: &CorpusSpec, split: Split, count: usize) -> Result<DurationCorpus> {
    spec.validate()?;
    let sentences = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(split.stream_base() + i as u64);
            generate_sentence(spec, &mut rng, format!("{split}{i:05}"))
        })
        .collect::<Result<_>>()?;
    Ok(DurationCorpus {
        spec: spec.clone(),
        split,
        sentences,
    })
}

fn generate_sentence(spec: &CorpusSpec, rng: &mut impl Rng, id: String) -> Result<Sentence> {
    let vocab = spec.vocab();
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut tokens = Vec::with_capacity(2 * len);
    let mut frames = Vec::with_capacity(2 * len);
    for _ in 0..len {
        let class = rng.random_range(0..spec.num_phones);
        tokens.push(class);
        frames.push(spec.phone_laws[class].sample(rng).max(1));
        let u: f64 = rng.random();
        let pause_p = spec.pause.as_ref().map_or(0.0, |p| p.prob);
        if let Some(p) = spec.pause.as_ref().filter(|_| u < pause_p) {
            tokens.push(vocab.pause());
            frames.push(p.law.sample(rng));
        } else if let Some(f) = spec.filler.as_ref().filter(|f| u < pause_p + f.prob) {
            tokens.push(vocab.filler());
            frames.push(f.law.sample(rng).max(1));
        }
    }
    let phones = PhoneSequence::interleave(&tokens, &vocab)?;
    let mut durations = Vec::with_capacity(2 * frames.len());
    for d in frames {
        durations.push(d);
        durations.push(spec.blank_law.sample(rng));
    }
    Ok(Sentence { id, phones, durations })
}

impl DurationCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn phone_sequences(&self) -> Vec<PhoneSequence> {
        self.sentences.iter().map(|s| s.phones.clone()).collect()
    }

    /// Reference frame counts grouped by token id.
    pub fn durations_by_token(&self) -> BTreeMap<usize, Vec<u32>> {
        let mut out: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for s in &self.sentences {
            for (&id, &d) in s.phones.ids().iter().zip(&s.durations) {
                out.entry(id).or_default().push(d);
            }
        }
        out
    }

    pub fn summary(&self) -> CorpusSummary {
        let v = self.spec.vocab();
        let mut sum = CorpusSummary {
            sentences: self.sentences.len(),
            positions: 0,
            phones: 0,
            pauses: 0,
            fillers: 0,
            total_frames: 0,
            pooled_std: 0.0,
        };
        let mut non_blank = Vec::new();
        for s in &self.sentences {
            for (&id, &d) in s.phones.ids().iter().zip(&s.durations) {
                sum.positions += 1;
                sum.total_frames += u64::from(d);
                if v.is_phone(id) {
                    sum.phones += 1;
                } else if id == v.pause() {
                    sum.pauses += 1;
                } else if id == v.filler() {
                    sum.fillers += 1;
                }
                if id != v.blank() {
                    non_blank.push(f64::from(d));
                }
            }
        }
        sum.pooled_std = std_dev(&non_blank);
        sum
    }
}

pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Checks per-position duration invariants of a sentence.
pub(crate) fn check_sentence(spec: &CorpusSpec, s: &Sentence) -> Result<()> {
    let v = spec.vocab();
    if s.durations.len() != s.phones.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tokens but {} durations",
            s.phones.len(),
            s.durations.len()
        )));
    }
    for (i, (&id, &d)) in s.phones.ids().iter().zip(&s.durations).enumerate() {
        let may_vanish = id == v.blank() || id == v.pause();
        if d == 0 && !may_vanish {
            return Err(Error::InvalidArgument(format!(
                "position {i} ({}) has zero duration",
                v.label(id)
            )));
        }
    }
    Ok(())
}
