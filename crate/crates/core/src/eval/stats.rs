use std::collections::BTreeMap;

use crate::data::{CorpusSpec, DurationCorpus};
use crate::duration::{to_frames, LogDurations, ZERO_DURATION_FLOOR};
use crate::error::{Error, Result};

/// Minimum sampled tokens per class for reported statistics.
pub const MIN_TOKENS_PER_CLASS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Fraction of samples nearest each declared mode; empty when unimodal.
    pub mode_freqs: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistStats {
    pub classes: Vec<ClassStats>,
}

impl DistStats {
    pub fn class(&self, label: &str) -> Option<&ClassStats> {
        self.classes.iter().find(|c| c.label == label)
    }
}

/// Per-class sample mean, standard deviation and nearest-mode frequencies.
///
/// `modes` maps a class label to its mode centres in frames; assignment is
/// by nearest centre in the log domain.
pub fn dist_stats(
    durations: &BTreeMap<String, Vec<u32>>,
    modes: &BTreeMap<String, Vec<f64>>,
) -> Result<DistStats> {
    let mut classes = Vec::with_capacity(durations.len());
    for (label, samples) in durations {
        if samples.is_empty() {
            return Err(Error::EmptyClass(label.clone()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().map(|&d| f64::from(d)).sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|&d| (f64::from(d) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mode_freqs = match modes.get(label) {
            Some(centres) if !centres.is_empty() => {
                let logc: Vec<f64> = centres.iter().map(|c| c.ln()).collect();
                let mut counts = vec![0usize; centres.len()];
                for &d in samples {
                    let x = f64::from(d).max(ZERO_DURATION_FLOOR).ln();
                    let nearest = logc
                        .iter()
                        .enumerate()
                        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                        .map(|(i, _)| i)
                        .expect("non-empty centres");
                    counts[nearest] += 1;
                }
                counts.iter().map(|&c| c as f64 / n).collect()
            }
            _ => Vec::new(),
        };
        classes.push(ClassStats {
            label: label.clone(),
            count: samples.len(),
            mean,
            std: var.sqrt(),
            mode_freqs,
        });
    }
    Ok(DistStats { classes })
}

/// Mode centres of every multimodal class of `spec`, keyed by label.
pub fn declared_modes(spec: &CorpusSpec) -> BTreeMap<String, Vec<f64>> {
    let v = spec.vocab();
    spec.multimodal_classes()
        .into_iter()
        .map(|k| (v.label(k), spec.phone_laws[k].mode_centres()))
        .collect()
}

/// Groups integer model outputs by token label, aligned with `corpus`.
pub fn group_outputs(
    corpus: &DurationCorpus,
    outputs: &[LogDurations],
    min_duration: u32,
) -> Result<BTreeMap<String, Vec<u32>>> {
    let v = corpus.spec.vocab();
    let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (s, o) in corpus.sentences.iter().zip(outputs) {
        let frames = to_frames(o, min_duration)?;
        for (&id, &d) in s.phones.ids().iter().zip(&frames) {
            out.entry(v.label(id)).or_default().push(d);
        }
    }
    Ok(out)
}

/// Reference durations grouped by token label.
pub fn group_reference(corpus: &DurationCorpus) -> BTreeMap<String, Vec<u32>> {
    let v = corpus.spec.vocab();
    corpus
        .durations_by_token()
        .into_iter()
        .map(|(id, d)| (v.label(id), d))
        .collect()
}
