//! Text-encoder stub: phone ids with interleaved blanks become conditioning
//! vectors for the duration models.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, Embedding, LayerNorm, LayerSpec};
use crate::numerics::{Parameters, Tape, Tensor, Var};

/// Token alphabet: phone classes `0..num_phones`, followed by the BLANK,
/// PAUSE and FILLER ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub num_phones: usize,
}

impl Vocabulary {
    pub fn new(num_phones: usize) -> Self {
        Self { num_phones }
    }

    pub fn blank(&self) -> usize {
        self.num_phones
    }

    pub fn pause(&self) -> usize {
        self.num_phones + 1
    }

    pub fn filler(&self) -> usize {
        self.num_phones + 2
    }

    pub fn size(&self) -> usize {
        self.num_phones + 3
    }

    pub fn is_phone(&self, id: usize) -> bool {
        id < self.num_phones
    }

    pub fn label(&self, id: usize) -> String {
        match id {
            _ if id == self.blank() => "blank".into(),
            _ if id == self.pause() => "pause".into(),
            _ if id == self.filler() => "filler".into(),
            _ => format!("p{id}"),
        }
    }
}

/// Inserts BLANK after every token: `[a, b] → [a, BLANK, b, BLANK]`.
pub fn interleave_blanks(ids: &[usize], vocab: &Vocabulary) -> Result<Vec<usize>> {
    if let Some(pos) = ids.iter().position(|&id| id == vocab.blank()) {
        return Err(Error::InvalidArgument(format!(
            "input already contains BLANK at position {pos}"
        )));
    }
    Ok(ids.iter().flat_map(|&id| [id, vocab.blank()]).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSequence {
    ids: Vec<usize>,
    interleaved: bool,
}

impl PhoneSequence {
    /// A sequence without blanks.
    pub fn raw(ids: Vec<usize>) -> Self {
        Self {
            ids,
            interleaved: false,
        }
    }

    /// Interleaves blanks into `phones`.
    pub fn interleave(phones: &[usize], vocab: &Vocabulary) -> Result<Self> {
        Ok(Self {
            ids: interleave_blanks(phones, vocab)?,
            interleaved: true,
        })
    }

    /// Wraps ids that already carry blanks at every odd position.
    pub fn from_interleaved(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if ids.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "interleaved sequence has odd length {}",
                ids.len()
            )));
        }
        for (i, &id) in ids.iter().enumerate() {
            if (i % 2 == 1) != (id == vocab.blank()) {
                return Err(Error::InvalidArgument(format!(
                    "position {i} breaks the blank interleaving (id {id})"
                )));
            }
            if id >= vocab.size() {
                return Err(Error::OutOfVocabulary {
                    id,
                    vocab: vocab.size(),
                });
            }
        }
        Ok(Self {
            ids,
            interleaved: true,
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_interleaved(&self) -> bool {
        self.interleaved
    }
}

/// Several sequences laid end to end with zero-filled gaps, so one pass of
/// same-padded convolutions processes them all without cross-talk.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub spans: Vec<Range<usize>>,
    /// Span index owning each column; gap columns belong to the span before.
    pub owner: Vec<usize>,
}

impl PackedBatch {
    pub fn new(seqs: &[&[usize]], gap: usize) -> Self {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        let mut spans = Vec::with_capacity(seqs.len());
        let mut owner = Vec::new();
        for (s, seq) in seqs.iter().enumerate() {
            if s > 0 {
                ids.extend(std::iter::repeat_n(0, gap));
                mask.extend(std::iter::repeat_n(false, gap));
                owner.extend(std::iter::repeat_n(s - 1, gap));
            }
            let start = ids.len();
            ids.extend_from_slice(seq);
            mask.extend(std::iter::repeat_n(true, seq.len()));
            owner.extend(std::iter::repeat_n(s, seq.len()));
            spans.push(start..ids.len());
        }
        Self {
            ids,
            mask,
            spans,
            owner,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mask_tensor(&self) -> Tensor {
        Tensor::vector(self.mask.iter().map(|&m| f64::from(u8::from(m))).collect())
    }
}

/// Encoder output: one `D`-dimensional vector per (packed) position.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSequence {
    pub vectors: Tensor,
    pub mask: Vec<bool>,
    pub spans: Vec<Range<usize>>,
    pub owner: Vec<usize>,
    /// Stable per-span key (sentence index) used to derive noise streams.
    pub keys: Vec<u64>,
}

impl ConditioningSequence {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn mask_tensor(&self) -> Tensor {
        Tensor::vector(self.mask.iter().map(|&m| f64::from(u8::from(m))).collect())
    }
}

/// Embedding → conv1d → layer norm → ReLU.
#[derive(Clone, Debug)]
pub struct Encoder {
    vocab: Vocabulary,
    embed: Embedding,
    conv: Conv1d,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new(params: &mut Parameters, rng: &mut impl Rng, vocab: Vocabulary, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            vocab,
            embed: Embedding::new(params, rng, "encoder.embed", vocab.size(), dim),
            conv: Conv1d::new(params, rng, "encoder.conv", dim, dim, kernel)?,
            norm: LayerNorm::new(params, "encoder.norm", dim),
        })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.embed.spec().output_dim
    }

    pub fn kernel_width(&self) -> usize {
        self.conv.spec().kernel_width
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        vec![self.embed.spec(), self.conv.spec(), self.norm.spec()]
    }

    /// Records the encoder on `tape`; returns `[D × T]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], ids: &[usize], mask: Var) -> Result<Var> {
        let x = self.embed.forward(tape, vars, ids)?;
        let x = tape.mul(x, mask)?;
        let h = self.conv.forward(tape, vars, x)?;
        let h = self.norm.forward(tape, vars, h)?;
        let h = tape.relu(h);
        tape.mul(h, mask)
    }
}

/// Encodes several interleaved sequences in one packed pass.
pub fn encode_batch(
    encoder: &Encoder,
    params: &Parameters,
    seqs: &[&PhoneSequence],
    keys: &[u64],
    gap: usize,
) -> Result<ConditioningSequence> {
    if let Some(s) = seqs.iter().find(|s| !s.is_interleaved()) {
        return Err(Error::InvalidArgument(format!(
            "encoder input must be blank-interleaved (sequence of length {})",
            s.len()
        )));
    }
    let raw: Vec<&[usize]> = seqs.iter().map(|s| s.ids()).collect();
    let batch = PackedBatch::new(&raw, gap);
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape, false);
    let mask = tape.constant(batch.mask_tensor());
    let out = encoder.forward(&mut tape, &vars, &batch.ids, mask)?;
    Ok(ConditioningSequence {
        vectors: tape.value(out).clone(),
        mask: batch.mask,
        spans: batch.spans,
        owner: batch.owner,
        keys: keys.to_vec(),
    })
}

/// Encodes one interleaved sequence.
pub fn encode(encoder: &Encoder, params: &Parameters, seq: &PhoneSequence) -> Result<ConditioningSequence> {
    encode_batch(encoder, params, &[seq], &[0], 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const V: Vocabulary = Vocabulary { num_phones: 5 };

    fn encoder() -> (Encoder, Parameters) {
        let mut params = Parameters::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let enc = Encoder::new(&mut params, &mut rng, V, 8, 3).unwrap();
        (enc, params)
    }

    #[test]
    fn interleave_examples() {
        let b = V.blank();
        assert_eq!(interleave_blanks(&[2], &V).unwrap(), vec![2, b]);
        assert!(interleave_blanks(&[], &V).unwrap().is_empty());
        assert_eq!(interleave_blanks(&[0, 1, 2], &V).unwrap(), vec![0, b, 1, b, 2, b]);
        assert!(interleave_blanks(&[0, b], &V).is_err());
    }

    #[test]
    fn interleaved_invariants() {
        let seq = PhoneSequence::interleave(&[4, 0, V.pause(), 3], &V).unwrap();
        assert_eq!(seq.len(), 8);
        assert!(seq.ids().iter().skip(1).step_by(2).all(|&id| id == V.blank()));
        assert!(PhoneSequence::from_interleaved(vec![1, 2], &V).is_err());
        assert!(PhoneSequence::from_interleaved(vec![1, V.blank(), 9, V.blank()], &V).is_err());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let (enc, params) = encoder();
        let seq = PhoneSequence::interleave(&[1, 2, 3], &V).unwrap();
        let a = encode(&enc, &params, &seq).unwrap();
        let b = encode(&enc, &params, &seq).unwrap();
        assert_eq!(a.vectors.shape(), &[8, 6]);
        assert_eq!(a, b);
    }

    #[test]
    fn raw_sequence_rejected() {
        let (enc, params) = encoder();
        assert!(encode(&enc, &params, &PhoneSequence::raw(vec![1, 2])).is_err());
    }

    #[test]
    fn out_of_vocabulary_rejected() {
        let (enc, params) = encoder();
        let seq = PhoneSequence {
            ids: vec![11, V.blank()],
            interleaved: true,
        };
        assert!(matches!(
            encode(&enc, &params, &seq),
            Err(Error::OutOfVocabulary { id: 11, .. })
        ));
    }

    #[test]
    fn swapping_phones_changes_affected_columns() {
        let (enc, params) = encoder();
        let a = encode(&enc, &params, &PhoneSequence::interleave(&[0, 1, 2, 3], &V).unwrap()).unwrap();
        let b = encode(&enc, &params, &PhoneSequence::interleave(&[0, 3, 2, 1], &V).unwrap()).unwrap();
        for col in [2, 6] {
            assert_ne!(a.vectors.column(col), b.vectors.column(col));
        }
    }

    #[test]
    fn edit_stays_within_receptive_field() {
        // one conv of width 3 after the embedding: radius 1
        let (enc, params) = encoder();
        let a = encode(&enc, &params, &PhoneSequence::interleave(&[0, 1, 2, 3, 4], &V).unwrap()).unwrap();
        let b = encode(&enc, &params, &PhoneSequence::interleave(&[0, 1, 4, 3, 4], &V).unwrap()).unwrap();
        let changed_at = 4;
        for col in 0..a.len() {
            let same = a.vectors.column(col) == b.vectors.column(col);
            assert_eq!(same, col.abs_diff(changed_at) > 1, "column {col}");
        }
    }

    #[test]
    fn packing_matches_individual_encoding() {
        let (enc, params) = encoder();
        let s1 = PhoneSequence::interleave(&[0, 1, 2], &V).unwrap();
        let s2 = PhoneSequence::interleave(&[4, 3], &V).unwrap();
        let packed = encode_batch(&enc, &params, &[&s1, &s2], &[0, 1], 1).unwrap();
        let solo2 = encode(&enc, &params, &s2).unwrap();
        let span = packed.spans[1].clone();
        for (i, col) in span.enumerate() {
            assert_eq!(packed.vectors.column(col), solo2.vectors.column(i));
        }
    }
}
