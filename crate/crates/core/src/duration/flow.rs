//! Deterministic log-MSE prediction and OT-CFM duration modelling.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::DurationModel;
use super::targets::LogDurations;
use crate::encoder::ConditioningSequence;
use crate::error::{Error, Result};
use crate::numerics::Tape;

/// Minimum noise level of the conditional probability path.
pub const SIGMA_MIN: f64 = 1e-4;

/// Anything that maps `(x, t, cond)` to a velocity per position.
pub trait VectorField {
    /// `x` has one entry per column of `cond`; `t` one entry per span.
    fn velocity(&self, cond: &ConditioningSequence, x: &[f64], t: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub nfe: usize,
    /// Standard-deviation scale of the initial noise.
    pub temperature: f64,
    pub seed: u64,
    pub min_duration: u32,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            nfe: 10,
            temperature: 0.667,
            seed: 0,
            min_duration: 0,
        }
    }
}

impl SampleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::InvalidArgument("nfe must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        if self.min_duration > 1 {
            return Err(Error::InvalidArgument(format!(
                "min_duration must be 0 or 1, got {}",
                self.min_duration
            )));
        }
        Ok(())
    }
}

/// Point on the optimal-transport conditional path and its target velocity:
/// `x_t = (1 − (1 − σ)t)·x0 + t·x1`, `u_t = x1 − (1 − σ)·x0`.
pub fn cfm_pair(x1: &[f64], x0: &[f64], t: f64, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let a = 1.0 - (1.0 - sigma) * t;
    x1.iter()
        .zip(x0)
        .map(|(&d, &z)| (a * z + t * d, d - (1.0 - sigma) * z))
        .unzip()
}

/// One random draw of flow times, noise and regression targets.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDraw {
    /// One time per span.
    pub t: Vec<f64>,
    pub x0: Vec<f64>,
    pub xt: Vec<f64>,
    pub ut: Vec<f64>,
}

/// Draws `t ~ U[0,1)` per span and `x0 ~ N(0,1)` per valid column.
pub fn draw_flow(cond: &ConditioningSequence, x1: &LogDurations, rng: &mut impl Rng) -> Result<FlowDraw> {
    draw_flow_spans(&cond.spans, cond.len(), x1, rng)
}

pub(crate) fn draw_flow_spans(
    spans: &[Range<usize>],
    n: usize,
    x1: &LogDurations,
    rng: &mut impl Rng,
) -> Result<FlowDraw> {
    if x1.len() != n {
        return Err(Error::ShapeMismatch {
            op: "draw_flow",
            left: vec![n],
            right: vec![x1.len()],
        });
    }
    let mut draw = FlowDraw {
        t: Vec::with_capacity(spans.len()),
        x0: vec![0.0; n],
        xt: vec![0.0; n],
        ut: vec![0.0; n],
    };
    for span in spans {
        let t: f64 = rng.random();
        draw.t.push(t);
        let x0: Vec<f64> = span.clone().map(|_| StandardNormal.sample(rng)).collect();
        let (xt, ut) = cfm_pair(&x1.values[span.clone()], &x0, t, SIGMA_MIN);
        draw.x0[span.clone()].copy_from_slice(&x0);
        draw.xt[span.clone()].copy_from_slice(&xt);
        draw.ut[span.clone()].copy_from_slice(&ut);
    }
    Ok(draw)
}

fn joint_mask(cond: &ConditioningSequence, target: &LogDurations) -> Vec<bool> {
    cond.mask.iter().zip(&target.mask).map(|(&a, &b)| a && b).collect()
}

fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let (sum, n) = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((p, t), _)| (s + (p - t) * (p - t), n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Flow-matching regression loss for one random draw from `rng`.
pub fn fm_loss(
    field: &impl VectorField,
    cond: &ConditioningSequence,
    reference: &LogDurations,
    rng: &mut impl Rng,
) -> Result<f64> {
    let draw = draw_flow(cond, reference, rng)?;
    let v = field.velocity(cond, &draw.xt, &draw.t)?;
    masked_mse(&v, &draw.ut, &joint_mask(cond, reference))
}

/// Euler integration of the learned field from `x(0) ~ N(0, temperature²)`
/// to `t = 1` in `nfe` uniform steps.
///
/// Each span draws its noise from its own stream keyed by
/// `(opts.seed, cond.keys[span])`, so results do not depend on batching.
pub fn fm_sample(field: &impl VectorField, cond: &ConditioningSequence, opts: &SampleOptions) -> Result<LogDurations> {
    opts.validate()?;
    let mut x = vec![0.0; cond.len()];
    if opts.temperature > 0.0 {
        for (span, &key) in cond.spans.iter().zip(&cond.keys) {
            let mut rng = noise_stream(opts.seed, key);
            for xi in &mut x[span.clone()] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *xi = opts.temperature * z;
            }
        }
    }
    let dt = 1.0 / opts.nfe as f64;
    let mut ts = vec![0.0; cond.spans.len()];
    for step in 0..opts.nfe {
        ts.fill(step as f64 * dt);
        let v = field.velocity(cond, &x, &ts)?;
        for ((xi, vi), &m) in x.iter_mut().zip(&v).zip(&cond.mask) {
            if m {
                *xi += dt * vi;
            }
        }
    }
    LogDurations::new(x, cond.mask.clone())
}

pub(crate) fn noise_stream(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

/// Expected log-duration per position from a DET model.
pub fn det_forward(model: &DurationModel, cond: &ConditioningSequence) -> Result<LogDurations> {
    let mut tape = Tape::new();
    let vars = model.params().attach(&mut tape, false);
    let c = tape.constant(cond.vectors.clone());
    let m = tape.constant(cond.mask_tensor());
    let y = model.det_on(&mut tape, &vars, c, m)?;
    LogDurations::new(tape.value(y).data().to_vec(), cond.mask.clone())
}

/// Mean squared log-domain error over positions valid in both inputs.
pub fn det_loss(pred: &LogDurations, reference: &LogDurations) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            op: "det_loss",
            left: vec![pred.len()],
            right: vec![reference.len()],
        });
    }
    let mask: Vec<bool> = pred.mask.iter().zip(&reference.mask).map(|(&a, &b)| a && b).collect();
    masked_mse(&pred.values, &reference.values, &mask)
}
