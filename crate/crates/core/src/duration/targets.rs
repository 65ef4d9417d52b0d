use std::ops::Range;

use crate::encoder::ConditioningSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Stand-in duration used for the log of a zero-frame reference.
pub const ZERO_DURATION_FLOOR: f64 = 1e-2;

/// Natural-log durations with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDurations {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

/// `ln d` for `d ≥ 1`, `ln(ZERO_DURATION_FLOOR)` for `d = 0`.
pub fn log_target(frames: u32) -> f64 {
    if frames == 0 {
        ZERO_DURATION_FLOOR.ln()
    } else {
        f64::from(frames).ln()
    }
}

impl LogDurations {
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "log durations",
                left: vec![values.len()],
                right: vec![mask.len()],
            });
        }
        Ok(Self { values, mask })
    }

    /// Every position valid.
    pub fn dense(values: Vec<f64>) -> Self {
        let mask = vec![true; values.len()];
        Self { values, mask }
    }

    /// Log-domain reference targets for integer frame counts.
    pub fn from_frames(frames: &[u32]) -> Self {
        Self::dense(frames.iter().map(|&d| log_target(d)).collect())
    }

    /// Reference targets laid out over a packed batch; gap columns masked.
    pub fn packed(frames: &[&[u32]], spans: &[Range<usize>], len: usize) -> Result<Self> {
        let mut values = vec![0.0; len];
        let mut mask = vec![false; len];
        for (f, span) in frames.iter().zip(spans) {
            if f.len() != span.len() {
                return Err(Error::ShapeMismatch {
                    op: "packed targets",
                    left: vec![f.len()],
                    right: vec![span.len()],
                });
            }
            for (i, &d) in span.clone().zip(f.iter()) {
                values[i] = log_target(d);
                mask[i] = true;
            }
        }
        Ok(Self { values, mask })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Cuts a packed result into one dense `LogDurations` per span.
    pub fn split(&self, spans: &[Range<usize>]) -> Vec<LogDurations> {
        spans
            .iter()
            .map(|s| LogDurations {
                values: self.values[s.clone()].to_vec(),
                mask: self.mask[s.clone()].to_vec(),
            })
            .collect()
    }
}

/// Linear-domain integer frame counts: `max(min_duration, round(exp(v)))`,
/// rounding half away from zero. Masked positions map to 0.
pub fn to_frames(log_dur: &LogDurations, min_duration: u32) -> Result<Vec<u32>> {
    log_dur
        .values
        .iter()
        .zip(&log_dur.mask)
        .enumerate()
        .map(|(position, (&v, &valid))| {
            if !valid {
                return Ok(0);
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { position });
            }
            let rounded = v.exp().round().min(f64::from(u32::MAX)) as u32;
            Ok(rounded.max(min_duration))
        })
        .collect()
}

/// Mean of `|exp(v) − round(exp(v))|` over valid positions.
pub fn quantisation_residual(log_dur: &LogDurations) -> f64 {
    let (sum, n) = log_dur
        .values
        .iter()
        .zip(&log_dur.mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&v, _)| {
            let e = v.exp();
            (s + (e - e.round()).abs(), n + 1)
        });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Repeats column `t` of the conditioning matrix `frames[t]` times.
pub fn length_regulate(cond: &ConditioningSequence, frames: &[i64]) -> Result<Tensor> {
    let t_len = cond.len();
    if frames.len() != t_len {
        return Err(Error::ShapeMismatch {
            op: "length_regulate",
            left: vec![t_len],
            right: vec![frames.len()],
        });
    }
    if let Some((position, &value)) = frames.iter().enumerate().find(|(_, &f)| f < 0) {
        return Err(Error::NegativeDuration { position, value });
    }
    let total: usize = frames.iter().map(|&f| f as usize).sum();
    let dim = cond.dim();
    let src = cond.vectors.data();
    let mut out = vec![0.0; dim * total];
    for r in 0..dim {
        let row = &src[r * t_len..(r + 1) * t_len];
        let dst = &mut out[r * total..(r + 1) * total];
        let mut k = 0;
        for (&v, &f) in row.iter().zip(frames) {
            dst[k..k + f as usize].fill(v);
            k += f as usize;
        }
    }
    Tensor::new([dim, total], out)
}
