//! Run configuration: defaults, then a flat `key = value` file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use durflow::{ModelConfig, ModelKind, SampleOptions, Style, TrainConfig};

/// Rejected configuration; reported as a usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            _ => Err(format!("unknown scale {s:?} (expected desk or full)")),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub style: Style,
    pub seed: u64,
    pub model: ModelKind,
    pub scale: Scale,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub nfe: usize,
    pub temperature: f64,
    pub min_duration: u32,
    /// Samples per sentence; 0 means 5 for FM and 1 for DET.
    pub realisations: usize,
    pub bench_reps: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let sample = SampleOptions::default();
        Self {
            style: Style::Read,
            seed: 0,
            model: ModelKind::Fm,
            scale: Scale::Desk,
            steps: train.steps,
            batch: train.batch,
            lr: train.lr,
            nfe: sample.nfe,
            temperature: sample.temperature,
            min_duration: sample.min_duration,
            realisations: 0,
            bench_reps: 3,
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| UsageError(format!("invalid value {value:?} for {key}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        match key {
            "style" => self.style = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "model" => self.model = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "nfe" => self.nfe = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "min_duration" => self.min_duration = parse(key, value)?,
            "realisations" => self.realisations = parse(key, value)?,
            "bench_reps" => self.bench_reps = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(UsageError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), UsageError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{}:{}: expected key = value", origin.display(), i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| UsageError(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let pairs = [
            ("style", self.style.to_string()),
            ("seed", self.seed.to_string()),
            ("model", self.model.to_string()),
            ("scale", self.scale.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", self.lr.to_string()),
            ("nfe", self.nfe.to_string()),
            ("temperature", self.temperature.to_string()),
            ("min_duration", self.min_duration.to_string()),
            ("realisations", self.realisations.to_string()),
            ("bench_reps", self.bench_reps.to_string()),
            ("out", self.out.display().to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: &str| Err(UsageError(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive and finite");
        }
        if self.nfe == 0 {
            return bad("nfe must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be non-negative and finite");
        }
        if self.min_duration > 1 {
            return bad("min_duration must be 0 or 1");
        }
        if self.bench_reps == 0 {
            return bad("bench_reps must be positive");
        }
        Ok(())
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            nfe: self.nfe,
            temperature: self.temperature,
            seed: self.seed,
            min_duration: self.min_duration,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn model_config(&self, num_phones: usize) -> ModelConfig {
        let c = match self.scale {
            Scale::Desk => ModelConfig::desk_scale(self.model, num_phones),
            Scale::Full => ModelConfig::full_scale(self.model, num_phones),
        };
        c.with_seed(self.seed)
    }

    pub fn realisations_for(&self, kind: ModelKind) -> usize {
        match (self.realisations, kind) {
            (0, ModelKind::Fm) => 5,
            (0, ModelKind::Det) => 1,
            (n, _) => n,
        }
    }
}
