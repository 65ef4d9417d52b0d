use rand::Rng;

use super::layers::{Conv1d, LayerNorm, LayerSpec, Linear};
use crate::error::Result;
use crate::numerics::{Parameters, Tape, Var};

/// Convolutional duration-predictor trunk:
/// `conv → ReLU → LN → conv → ReLU → LN → linear`, one scalar per column.
///
/// An optional per-column additive term (the flow-time embedding) is added
/// after each convolution, before its activation.
#[derive(Clone, Debug)]
pub struct Backbone {
    conv1: Conv1d,
    norm1: LayerNorm,
    conv2: Conv1d,
    norm2: LayerNorm,
    proj: Linear,
}

impl Backbone {
    pub fn new(
        params: &mut Parameters,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::new(params, rng, &format!("{name}.conv1"), input_dim, channels, kernel)?,
            norm1: LayerNorm::new(params, &format!("{name}.norm1"), channels),
            conv2: Conv1d::new(params, rng, &format!("{name}.conv2"), channels, channels, kernel)?,
            norm2: LayerNorm::new(params, &format!("{name}.norm2"), channels),
            proj: Linear::new(params, rng, &format!("{name}.proj"), channels, 1),
        })
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        vec![
            self.conv1.spec(),
            self.norm1.spec(),
            self.conv2.spec(),
            self.norm2.spec(),
            self.proj.spec(),
        ]
    }

    pub fn param_count(&self) -> usize {
        super::layers::param_count(&self.layer_specs())
    }

    /// `x: [D_in × T]`, `mask: [T]` of 0/1 values, `time: [C × T]`.
    /// Returns `[T]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, mask: Var, time: Option<Var>) -> Result<Var> {
        // gap columns of x may be nonzero (biased projections of the noise)
        let x = tape.mul(x, mask)?;
        let h = self.block(tape, vars, x, mask, time, &self.conv1, &self.norm1)?;
        let h = self.block(tape, vars, h, mask, time, &self.conv2, &self.norm2)?;
        let y = self.proj.forward_columns(tape, vars, h)?;
        let t_len = tape.shape(y)[1];
        tape.reshape(y, [t_len])
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mask: Var,
        time: Option<Var>,
        conv: &Conv1d,
        norm: &LayerNorm,
    ) -> Result<Var> {
        let mut h = conv.forward(tape, vars, x)?;
        if let Some(te) = time {
            h = tape.add(h, te)?;
        }
        let h = tape.relu(h);
        let h = norm.forward(tape, vars, h)?;
        // zero the packing gaps so neighbouring sequences never interact
        tape.mul(h, mask)
    }
}
