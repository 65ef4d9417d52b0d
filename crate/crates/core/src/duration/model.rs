use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::flow::VectorField;
use crate::encoder::{ConditioningSequence, Encoder, PackedBatch, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{Backbone, Checkpoint, LayerSpec, Linear, TimeEmbedding};
use crate::numerics::{Parameters, Tape, Tensor, Var};

/// Which duration head a model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Log-domain MSE regression.
    Det,
    /// Flow-matching vector field.
    Fm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Det => "det",
            Self::Fm => "fm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" => Ok(Self::Det),
            "fm" => Ok(Self::Fm),
            _ => Err(Error::InvalidArgument(format!("unknown model kind `{s}` (expected det|fm)"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_phones: usize,
    pub enc_dim: usize,
    pub enc_kernel: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Width of the learned projection of the noisy duration (FM only).
    pub noise_dim: usize,
    /// Sinusoidal width of the flow-time embedding (FM only).
    pub time_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size predictor: 256 channels, width-3 kernels, 256-d encoder.
    pub fn full_scale(kind: ModelKind, num_phones: usize) -> Self {
        Self {
            kind,
            num_phones,
            enc_dim: 256,
            enc_kernel: 3,
            channels: 256,
            kernel: 3,
            noise_dim: 16,
            time_dim: 64,
            seed: 0,
        }
    }

    /// Reduced widths for single-core training runs.
    pub fn desk_scale(kind: ModelKind, num_phones: usize) -> Self {
        Self {
            kind,
            num_phones,
            enc_dim: 32,
            enc_kernel: 3,
            channels: 64,
            kernel: 3,
            noise_dim: 8,
            time_dim: 16,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_kind(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.num_phones)
    }

    /// Zero columns inserted between packed sequences.
    pub fn pack_gap(&self) -> usize {
        self.enc_kernel.max(self.kernel) / 2
    }
}

#[derive(Clone, Debug)]
struct FlowInputs {
    noise_proj: Linear,
    time: TimeEmbedding,
}

/// Encoder plus duration head, with all parameters in one store.
#[derive(Clone, Debug)]
pub struct DurationModel {
    config: ModelConfig,
    params: Parameters,
    encoder: Encoder,
    flow: Option<FlowInputs>,
    backbone: Backbone,
    trained_steps: u64,
    label: String,
}

impl DurationModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Parameters::new();
        let encoder = Encoder::new(&mut params, &mut rng, config.vocab(), config.enc_dim, config.enc_kernel)?;
        let (flow, input_dim) = match config.kind {
            ModelKind::Det => (None, config.enc_dim),
            ModelKind::Fm => {
                let noise_proj = Linear::new(&mut params, &mut rng, "flow.noise_proj", 1, config.noise_dim);
                let time = TimeEmbedding::new(&mut params, &mut rng, "flow.time", config.time_dim, config.channels)?;
                (Some(FlowInputs { noise_proj, time }), config.enc_dim + config.noise_dim)
            }
        };
        let backbone = Backbone::new(&mut params, &mut rng, "predictor", input_dim, config.channels, config.kernel)?;
        Ok(Self {
            config,
            params,
            encoder,
            flow,
            backbone,
            trained_steps: 0,
            label: String::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    pub fn add_trained_steps(&mut self, n: u64) {
        self.trained_steps += n;
    }

    /// Free-form tag, e.g. the corpus the model was trained on.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn require_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(Error::ModelKindMismatch {
                expected: kind.to_string(),
                found: self.kind().to_string(),
            })
        }
    }

    /// Named layer shapes, encoder first.
    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let mut out = Vec::new();
        let enc_names = ["encoder.embed", "encoder.conv", "encoder.norm"];
        for (n, s) in enc_names.iter().zip(self.encoder.layer_specs()) {
            out.push((n.to_string(), s));
        }
        if let Some(f) = &self.flow {
            out.push(("flow.noise_proj".into(), f.noise_proj.spec()));
            out.push(("flow.time".into(), f.time.spec()));
        }
        let bb_names = ["predictor.conv1", "predictor.norm1", "predictor.conv2", "predictor.norm2", "predictor.proj"];
        for (n, s) in bb_names.iter().zip(self.backbone.layer_specs()) {
            out.push((n.to_string(), s));
        }
        out
    }

    /// All parameters, encoder included.
    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(|(_, s)| s.param_count()).sum()
    }

    /// Parameters of the duration predictor alone (everything but the encoder).
    pub fn predictor_param_count(&self) -> usize {
        self.param_count() - self.encoder_param_count()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.layer_specs().iter().map(LayerSpec::param_count).sum()
    }

    /// Content hash of the checkpoint text, shortened.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_checkpoint().to_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn encode_on(&self, tape: &mut Tape, vars: &[Var], batch: &PackedBatch, mask: Var) -> Result<Var> {
        self.encoder.forward(tape, vars, &batch.ids, mask)
    }

    pub(crate) fn det_on(&self, tape: &mut Tape, vars: &[Var], cond: Var, mask: Var) -> Result<Var> {
        self.require_kind(ModelKind::Det)?;
        self.backbone.forward(tape, vars, cond, mask, None)
    }

    /// Vector-field head: `x` per column, `t` per span.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn field_on(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        cond: Var,
        mask: Var,
        x: &[f64],
        t: &[f64],
        owner: &[usize],
    ) -> Result<Var> {
        let flow = self.flow.as_ref().ok_or_else(|| Error::ModelKindMismatch {
            expected: ModelKind::Fm.to_string(),
            found: self.kind().to_string(),
        })?;
        let t_len = x.len();
        let xc = tape.constant(Tensor::new([t_len, 1], x.to_vec())?);
        let xp = flow.noise_proj.forward_rows(tape, vars, xc)?;
        let xp = tape.transpose(xp)?;
        let input = tape.concat_rows(&[cond, xp])?;
        let te = flow.time.forward(tape, vars, t)?;
        let te_cols = tape.embed_rows(te, owner)?;
        self.backbone.forward(tape, vars, input, mask, Some(te_cols))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let mut ck = Checkpoint::default();
        let meta = [
            ("kind", c.kind.to_string()),
            ("num_phones", c.num_phones.to_string()),
            ("enc_dim", c.enc_dim.to_string()),
            ("enc_kernel", c.enc_kernel.to_string()),
            ("channels", c.channels.to_string()),
            ("kernel", c.kernel.to_string()),
            ("noise_dim", c.noise_dim.to_string()),
            ("time_dim", c.time_dim.to_string()),
            ("seed", c.seed.to_string()),
            ("trained_steps", self.trained_steps.to_string()),
            ("label", self.label.clone()),
        ];
        for (k, v) in meta {
            ck.meta.insert(k.to_string(), v);
        }
        ck.layers = self.layer_specs();
        ck.params = self.params.clone();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("checkpoint field `{k}`: {e}")))
        };
        let config = ModelConfig {
            kind: get("kind")?.parse()?,
            num_phones: num("num_phones")?,
            enc_dim: num("enc_dim")?,
            enc_kernel: num("enc_kernel")?,
            channels: num("channels")?,
            kernel: num("kernel")?,
            noise_dim: num("noise_dim")?,
            time_dim: num("time_dim")?,
            seed: num("seed")? as u64,
        };
        let mut model = Self::new(config)?;
        if model.layer_specs() != ck.layers {
            return Err(Error::InvalidArgument("checkpoint layer specs do not match its config".into()));
        }
        if model.params.names() != ck.params.names() {
            return Err(Error::InvalidArgument("checkpoint parameter names do not match its config".into()));
        }
        for i in 0..model.params.len() {
            if model.params.tensor(i).shape() != ck.params.tensor(i).shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: model.params.tensor(i).shape().to_vec(),
                    right: ck.params.tensor(i).shape().to_vec(),
                });
            }
        }
        model.params = ck.params.clone();
        model.trained_steps = num("trained_steps")? as u64;
        model.label = ck.meta.get("label").cloned().unwrap_or_default();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl VectorField for DurationModel {
    fn velocity(&self, cond: &ConditioningSequence, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let c = tape.constant(cond.vectors.clone());
        let m = tape.constant(cond.mask_tensor());
        let v = self.field_on(&mut tape, &vars, c, m, x, t, &cond.owner)?;
        Ok(tape.value(v).data().to_vec())
    }
}
