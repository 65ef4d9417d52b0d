//! Minibatch training of DET and FM duration models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DurationCorpus, Sentence};
use crate::duration::{draw_flow_spans, DurationModel, LogDurations, ModelKind};
use crate::encoder::PackedBatch;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};

/// Learning-rate schedule over the step budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Linear from `lr` at step 0 to zero after the last step.
    LinearDecay,
}

impl LrSchedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::LinearDecay => 1.0 - step as f64 / steps.max(1) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sentences per minibatch.
    pub batch: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 16,
            lr: 1e-3,
            schedule: LrSchedule::LinearDecay,
            seed: 0,
        }
    }
}

/// Per-step training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean over the first `n` logged losses.
    pub fn head_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses.iter().take(k).sum::<f64>() / k as f64
    }

    /// Mean over the last `n` logged losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses.iter().rev().take(k).sum::<f64>() / k as f64
    }
}

fn masked_mse_on(tape: &mut Tape, pred: Var, target: &LogDurations) -> Result<Var> {
    let count = target.valid_count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let t = tape.constant(Tensor::vector(target.values.clone()));
    let m = tape.constant(Tensor::vector(
        target.mask.iter().map(|&b| f64::from(u8::from(b))).collect(),
    ));
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.mul(sq, m)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / count as f64))
}

/// Loss of `model` on one packed minibatch, plus parameter gradients when
/// `with_grads` is set. FM draws its flow times and noise from `rng`.
pub fn batch_loss(
    model: &DurationModel,
    sentences: &[&Sentence],
    rng: &mut impl Rng,
    with_grads: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    let ids: Vec<&[usize]> = sentences.iter().map(|s| s.phones.ids()).collect();
    let batch = PackedBatch::new(&ids, model.config().pack_gap());
    let frames: Vec<&[u32]> = sentences.iter().map(|s| s.durations.as_slice()).collect();
    let target = LogDurations::packed(&frames, &batch.spans, batch.len())?;

    let mut tape = Tape::new();
    let vars = model.params().attach(&mut tape, with_grads);
    let mask = tape.constant(batch.mask_tensor());
    let cond = model.encode_on(&mut tape, &vars, &batch, mask)?;
    let loss = match model.kind() {
        ModelKind::Det => {
            let pred = model.det_on(&mut tape, &vars, cond, mask)?;
            masked_mse_on(&mut tape, pred, &target)?
        }
        ModelKind::Fm => {
            let draw = draw_flow_spans(&batch.spans, batch.len(), &target, rng)?;
            let v = model.field_on(&mut tape, &vars, cond, mask, &draw.xt, &draw.t, &batch.owner)?;
            let ut = LogDurations::new(draw.ut, target.mask.clone())?;
            masked_mse_on(&mut tape, v, &ut)?
        }
    };
    let value = tape.value(loss).item().expect("scalar loss");
    if !with_grads {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    Ok((value, Some(vars.iter().map(|&v| grads.wrt(v)).collect())))
}

/// Trains `model` in place with Adam on uniformly drawn minibatches.
///
/// `on_step` sees every step's loss. Aborts on a non-finite loss.
pub fn train(
    model: &mut DurationModel,
    corpus: &DurationCorpus,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamConfig::default();
    let mut state = AdamState::new(model.params());
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let picks: Vec<&Sentence> = (0..cfg.batch)
            .map(|_| &corpus.sentences[rng.random_range(0..corpus.len())])
            .collect();
        let (loss, grads) = batch_loss(model, &picks, &mut rng, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.lr = cfg.lr * cfg.schedule.factor(step, cfg.steps);
        adam_step(model.params_mut(), &grads.expect("requested"), &mut state, &adam)?;
        model.add_trained_steps(1);
        log.losses.push(loss);
        on_step(step, loss);
    }
    Ok(log)
}
