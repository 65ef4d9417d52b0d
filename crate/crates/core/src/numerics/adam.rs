use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros = |p: &Tensor| vec![0.0; p.numel()];
        Self {
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one bias-corrected Adam update in place.
///
/// Gradients are checked before any parameter is touched, so a non-finite
/// gradient leaves both `params` and `state` unchanged.
pub fn adam_step(
    params: &mut Parameters,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: params.name(i).to_string(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.tensor_mut(i).data_mut();
        for (((pj, &gj), mj), vj) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
        {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
