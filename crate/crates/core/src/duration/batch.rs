use rayon::prelude::*;

use super::flow::{det_forward, fm_sample, SampleOptions};
use super::model::{DurationModel, ModelKind};
use super::targets::LogDurations;
use crate::encoder::{encode_batch, ConditioningSequence, PhoneSequence};
use crate::error::{Error, Result};

/// Sentences per packed forward pass.
pub const CHUNK: usize = 32;

/// Encodes interleaved sentences in one packed batch.
pub fn encode_sentences(model: &DurationModel, seqs: &[&PhoneSequence], keys: &[u64]) -> Result<ConditioningSequence> {
    encode_batch(model.encoder(), model.params(), seqs, keys, model.config().pack_gap())
}

/// Log-duration output for each sentence: the conditional mean for DET
/// models, one flow sample for FM models.
///
/// `keys[i]` selects the noise stream of sentence `i`; chunking and thread
/// count never change the result.
pub fn predict_sentences(
    model: &DurationModel,
    seqs: &[PhoneSequence],
    keys: &[u64],
    opts: &SampleOptions,
) -> Result<Vec<LogDurations>> {
    if keys.len() != seqs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sentences but {} noise keys",
            seqs.len(),
            keys.len()
        )));
    }
    opts.validate()?;
    let chunks: Vec<(Vec<&PhoneSequence>, &[u64])> = seqs
        .chunks(CHUNK)
        .zip(keys.chunks(CHUNK))
        .map(|(s, k)| (s.iter().collect(), k))
        .collect();
    let per_chunk: Vec<Vec<LogDurations>> = chunks
        .par_iter()
        .map(|(s, k)| predict_chunk(model, s, k, opts))
        .collect::<Result<_>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

fn predict_chunk(
    model: &DurationModel,
    seqs: &[&PhoneSequence],
    keys: &[u64],
    opts: &SampleOptions,
) -> Result<Vec<LogDurations>> {
    let cond = encode_sentences(model, seqs, keys)?;
    let out = match model.kind() {
        ModelKind::Det => det_forward(model, &cond)?,
        ModelKind::Fm => fm_sample(model, &cond, opts)?,
    };
    Ok(out.split(&cond.spans))
}

/// Sequential index keys `0..n`.
pub fn index_keys(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}
