use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::Vocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Read,
    #[serde(rename = "spont")]
    Spontaneous,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Read => "read",
            Self::Spontaneous => "spont",
        })
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "read" => Ok(Self::Read),
            "spont" | "spontaneous" => Ok(Self::Spontaneous),
            _ => Err(Error::InvalidSpec(format!("unknown style `{s}` (expected read|spont)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalMode {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Frame-count law of one token class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum DurationLaw {
    /// `round(exp(N(mu, sigma²)))`.
    LogNormal { mu: f64, sigma: f64 },
    /// Weighted mixture of log-normal modes.
    Mixture { modes: Vec<LogNormalMode> },
    /// 0 with probability `p_zero`, otherwise uniform on `1..=max`.
    NearZero { p_zero: f64, max: u32 },
}

impl DurationLaw {
    pub fn validate(&self) -> Result<()> {
        let check_ln = |mu: f64, sigma: f64| {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidSpec(format!("log-normal sigma must be positive, got {sigma}")));
            }
            if !mu.is_finite() {
                return Err(Error::InvalidSpec(format!("log-normal mu must be finite, got {mu}")));
            }
            Ok(())
        };
        match self {
            Self::LogNormal { mu, sigma } => check_ln(*mu, *sigma),
            Self::Mixture { modes } => {
                if modes.is_empty() {
                    return Err(Error::InvalidSpec("mixture without modes".into()));
                }
                for m in modes {
                    check_ln(m.mu, m.sigma)?;
                    if !(m.weight >= 0.0) {
                        return Err(Error::InvalidSpec(format!("negative mixture weight {}", m.weight)));
                    }
                }
                let total: f64 = modes.iter().map(|m| m.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidSpec(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
            Self::NearZero { p_zero, max } => {
                if !(0.0..=1.0).contains(p_zero) {
                    return Err(Error::InvalidSpec(format!("p_zero {p_zero} outside [0, 1]")));
                }
                if *max == 0 && *p_zero < 1.0 {
                    return Err(Error::InvalidSpec("near-zero law with max 0 must have p_zero = 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Draws a frame count (before any class-specific floor).
    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let round = |x: f64| x.round().min(f64::from(u32::MAX)) as u32;
        match self {
            Self::LogNormal { mu, sigma } => round(lognormal(*mu, *sigma).sample(rng)),
            Self::Mixture { modes } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = modes.last().expect("validated");
                for m in modes {
                    acc += m.weight;
                    if u < acc {
                        chosen = m;
                        break;
                    }
                }
                round(lognormal(chosen.mu, chosen.sigma).sample(rng))
            }
            Self::NearZero { p_zero, max } => {
                if rng.random::<f64>() < *p_zero {
                    0
                } else {
                    rng.random_range(1..=*max)
                }
            }
        }
    }

    /// Mode centres in frames, for multi-modal laws.
    pub fn mode_centres(&self) -> Vec<f64> {
        match self {
            Self::Mixture { modes } if modes.len() > 1 => modes.iter().map(|m| m.mu.exp()).collect(),
            _ => Vec::new(),
        }
    }
}

fn lognormal(mu: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(mu, sigma).expect("validated log-normal parameters")
}

/// Token inserted after a phone with probability `prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub prob: f64,
    pub law: DurationLaw,
}

/// Everything needed to regenerate a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub style: Style,
    pub num_phones: usize,
    pub phone_laws: Vec<DurationLaw>,
    pub blank_law: DurationLaw,
    pub pause: Option<Insertion>,
    pub filler: Option<Insertion>,
    pub num_sentences: usize,
    pub validation_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

/// Held-out sentences per corpus.
pub const VALIDATION_SENTENCES: usize = 100;

/// Linear-domain means of the read-style phone classes.
pub fn read_class_mean(class: usize) -> f64 {
    3.0 + 0.45 * class as f64
}

impl CorpusSpec {
    /// 20 phone classes, log-normal with sigma 0.1, no pauses or fillers.
    pub fn read_default(seed: u64) -> Self {
        Self {
            style: Style::Read,
            num_phones: 20,
            phone_laws: (0..20)
                .map(|k| DurationLaw::LogNormal {
                    mu: read_class_mean(k).ln(),
                    sigma: 0.1,
                })
                .collect(),
            blank_law: DurationLaw::NearZero { p_zero: 0.8, max: 2 },
            pause: None,
            filler: None,
            num_sentences: 1000,
            validation_sentences: VALIDATION_SENTENCES,
            min_len: 8,
            max_len: 24,
            seed,
        }
    }

    /// The read-style classes plus a bimodal class (modes at 2 and 12
    /// frames), heavy-tailed pauses and fillers.
    pub fn spontaneous_default(seed: u64) -> Self {
        let mut spec = Self::read_default(seed);
        spec.style = Style::Spontaneous;
        spec.num_phones = 21;
        spec.phone_laws.push(DurationLaw::Mixture {
            modes: vec![
                LogNormalMode {
                    weight: 0.5,
                    mu: 2f64.ln(),
                    sigma: 0.1,
                },
                LogNormalMode {
                    weight: 0.5,
                    mu: 12f64.ln(),
                    sigma: 0.1,
                },
            ],
        });
        spec.pause = Some(Insertion {
            prob: 0.15,
            law: DurationLaw::LogNormal {
                mu: 15f64.ln(),
                sigma: 0.8,
            },
        });
        spec.filler = Some(Insertion {
            prob: 0.08,
            law: DurationLaw::LogNormal {
                mu: 20f64.ln(),
                sigma: 0.3,
            },
        });
        spec
    }

    pub fn default_for(style: Style, seed: u64) -> Self {
        match style {
            Style::Read => Self::read_default(seed),
            Style::Spontaneous => Self::spontaneous_default(seed),
        }
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.num_phones)
    }

    /// Phone classes whose law has more than one mode.
    pub fn multimodal_classes(&self) -> Vec<usize> {
        (0..self.num_phones)
            .filter(|&k| !self.phone_laws[k].mode_centres().is_empty())
            .collect()
    }

    /// Law for any token id.
    pub fn law_for(&self, id: usize) -> Option<&DurationLaw> {
        let v = self.vocab();
        if v.is_phone(id) {
            self.phone_laws.get(id)
        } else if id == v.blank() {
            Some(&self.blank_law)
        } else if id == v.pause() {
            self.pause.as_ref().map(|p| &p.law)
        } else if id == v.filler() {
            self.filler.as_ref().map(|p| &p.law)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_phones == 0 {
            return Err(Error::InvalidSpec("no phone classes".into()));
        }
        if self.phone_laws.len() != self.num_phones {
            return Err(Error::InvalidSpec(format!(
                "{} phone laws for {} classes",
                self.phone_laws.len(),
                self.num_phones
            )));
        }
        for law in &self.phone_laws {
            law.validate()?;
        }
        self.blank_law.validate()?;
        let mut total_prob = 0.0;
        for ins in [&self.pause, &self.filler].into_iter().flatten() {
            if !(0.0..=1.0).contains(&ins.prob) {
                return Err(Error::InvalidSpec(format!("insertion probability {} outside [0, 1]", ins.prob)));
            }
            ins.law.validate()?;
            total_prob += ins.prob;
        }
        if total_prob > 1.0 {
            return Err(Error::InvalidSpec(format!("insertion probabilities sum to {total_prob} > 1")));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidSpec(format!(
                "length range {}..={} is empty or starts at 0",
                self.min_len, self.max_len
            )));
        }
        if self.style == Style::Read {
            for law in &self.phone_laws {
                match law {
                    DurationLaw::LogNormal { sigma, .. } if *sigma <= 0.15 => {}
                    _ => {
                        return Err(Error::InvalidSpec(
                            "read-style phone classes must be log-normal with sigma <= 0.15".into(),
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}
