use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Parameters, Tape, Tensor, Var};

/// Kinds of parameterised layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    Conv1d,
    LayerNorm,
    Linear,
    TimeEmbedding,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Embedding => "embedding",
            Self::Conv1d => "conv1d",
            Self::LayerNorm => "layer_norm",
            Self::Linear => "linear",
            Self::TimeEmbedding => "time_embedding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "embedding" => Self::Embedding,
            "conv1d" => Self::Conv1d,
            "layer_norm" => Self::LayerNorm,
            "linear" => Self::Linear,
            "time_embedding" => Self::TimeEmbedding,
            _ => return None,
        })
    }
}

/// Shape description of one layer; the parameter count follows from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Kernel width for convolutions, 1 otherwise.
    pub kernel_width: usize,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        let (i, o, k) = (self.input_dim, self.output_dim, self.kernel_width);
        match self.kind {
            LayerKind::Embedding => i * o,
            LayerKind::Conv1d => o * i * k + o,
            LayerKind::LayerNorm => 2 * o,
            LayerKind::Linear => i * o + o,
            LayerKind::TimeEmbedding => {
                let h = TIME_HIDDEN_MULT * i;
                i * h + h + h * o + o
            }
        }
    }
}

/// Exact parameter total of a model described by its layers.
pub fn param_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::param_count).sum()
}

fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Lookup table mapping token ids to vectors.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: usize,
    spec: LayerSpec,
}

impl Embedding {
    pub fn new(params: &mut Parameters, rng: &mut impl Rng, name: &str, vocab: usize, dim: usize) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let data = (0..vocab * dim).map(|_| normal.sample(rng)).collect();
        let table = params.insert(format!("{name}.table"), Tensor::new([vocab, dim], data).expect("shape"));
        Self {
            table,
            spec: LayerSpec {
                kind: LayerKind::Embedding,
                input_dim: vocab,
                output_dim: dim,
                kernel_width: 1,
            },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    /// `[E × T]` output, one column per id.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], ids: &[usize]) -> Result<Var> {
        tape.embed_rows(vars[self.table], ids)
    }
}

/// Same-padded convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    kernel: usize,
    bias: usize,
    spec: LayerSpec,
}

impl Conv1d {
    pub fn new(
        params: &mut Parameters,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        width: usize,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel width {width} is even")));
        }
        let fan_in = c_in * width;
        let w = Tensor::new([c_out, c_in, width], uniform_init(rng, c_out * fan_in, fan_in))?;
        let b = Tensor::vector(uniform_init(rng, c_out, fan_in));
        Ok(Self {
            kernel: params.insert(format!("{name}.kernel"), w),
            bias: params.insert(format!("{name}.bias"), b),
            spec: LayerSpec {
                kind: LayerKind::Conv1d,
                input_dim: c_in,
                output_dim: c_out,
                kernel_width: width,
            },
        })
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv1d(x, vars[self.kernel], Some(vars[self.bias]))
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Channel-wise layer norm over `[C × T]` activations.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: usize,
    bias: usize,
    spec: LayerSpec,
}

impl LayerNorm {
    pub fn new(params: &mut Parameters, name: &str, dim: usize) -> Self {
        Self {
            gain: params.insert(format!("{name}.gain"), Tensor::ones([dim])),
            bias: params.insert(format!("{name}.bias"), Tensor::zeros([dim])),
            spec: LayerSpec {
                kind: LayerKind::LayerNorm,
                input_dim: dim,
                output_dim: dim,
                kernel_width: 1,
            },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, vars[self.gain], vars[self.bias], LAYER_NORM_EPS)
    }
}

/// Affine map `x · W + b` on row vectors; weight stored as `[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: usize,
    bias: usize,
    spec: LayerSpec,
}

impl Linear {
    pub fn new(params: &mut Parameters, rng: &mut impl Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = Tensor::new([d_in, d_out], uniform_init(rng, d_in * d_out, d_in)).expect("shape");
        let b = Tensor::vector(uniform_init(rng, d_out, d_in));
        Self {
            weight: params.insert(format!("{name}.weight"), w),
            bias: params.insert(format!("{name}.bias"), b),
            spec: LayerSpec {
                kind: LayerKind::Linear,
                input_dim: d_in,
                output_dim: d_out,
                kernel_width: 1,
            },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    /// `[N × in] → [N × out]`.
    pub fn forward_rows(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let xw = tape.matmul(x, vars[self.weight])?;
        tape.add(xw, vars[self.bias])
    }

    /// `[in × T] → [out × T]`.
    pub fn forward_columns(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let rows = tape.transpose(x)?;
        let y = self.forward_rows(tape, vars, rows)?;
        tape.transpose(y)
    }
}

/// Hidden width of the time-embedding MLP relative to its input width.
pub const TIME_HIDDEN_MULT: usize = 4;

/// Multiplier applied to `t ∈ [0, 1]` before the sinusoidal encoding.
pub const TIME_SCALE: f64 = 1000.0;

/// Interleaved `[sin, cos, sin, cos, …]` features at geometrically spaced
/// frequencies `10000^(-2i/dim)`.
pub fn sinusoidal_encoding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "sinusoidal embedding dim must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
        let phase = TIME_SCALE * t * freq;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

/// Sinusoidal encoding of the flow time followed by a two-layer MLP
/// (`sin_dim → 4·sin_dim → out_dim`).
#[derive(Clone, Debug)]
pub struct TimeEmbedding {
    sin_dim: usize,
    hidden: Linear,
    out: Linear,
}

impl TimeEmbedding {
    pub fn new(params: &mut Parameters, rng: &mut impl Rng, name: &str, sin_dim: usize, out_dim: usize) -> Result<Self> {
        if sin_dim == 0 || sin_dim % 2 == 1 {
            return Err(Error::InvalidArgument(format!("time embedding dim {sin_dim} must be even")));
        }
        let h = TIME_HIDDEN_MULT * sin_dim;
        Ok(Self {
            sin_dim,
            hidden: Linear::new(params, rng, &format!("{name}.hidden"), sin_dim, h),
            out: Linear::new(params, rng, &format!("{name}.out"), h, out_dim),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::TimeEmbedding,
            input_dim: self.sin_dim,
            output_dim: self.out.spec().output_dim,
            kernel_width: 1,
        }
    }

    /// One embedding row per entry of `ts`: `[B × out_dim]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], ts: &[f64]) -> Result<Var> {
        let mut enc = Vec::with_capacity(ts.len() * self.sin_dim);
        for &t in ts {
            enc.extend(sinusoidal_encoding(t, self.sin_dim)?);
        }
        let x = tape.constant(Tensor::new([ts.len(), self.sin_dim], enc)?);
        let h = self.hidden.forward_rows(tape, vars, x)?;
        let h = tape.relu(h);
        self.out.forward_rows(tape, vars, h)
    }
}
