//! Oracles shared by the integration suites. Nothing here calls into the
//! code under test except to evaluate the function being checked.

#![allow(dead_code)]

use std::collections::BTreeMap;

use durflow::data::{DurationCorpus, DurationLaw};
use durflow::numerics::{Tape, Tensor, Var};
use durflow::train::batch_loss;
use durflow::DurationModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so that vanishing gradients
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries whose one-sided differences disagree, i.e. a ReLU kink lies
    /// inside the stencil. They are excluded from `max_rel_err`.
    pub kinks: usize,
}

impl FdReport {
    fn merge(&mut self, other: FdReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.kinks += other.kinks;
    }
}

fn fd_entry(f: &mut impl FnMut(f64) -> f64, analytic: f64, h: f64) -> (Option<f64>, bool) {
    let (fp, f0, fm) = (f(h), f(0.0), f(-h));
    let central = (fp - fm) / (2.0 * h);
    let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
    if rel_err(fwd, bwd) > 1e-2 {
        return (None, true);
    }
    (Some(rel_err(analytic, central)), false)
}

/// Checks the gradient of the scalar built by `build` with respect to every
/// entry of every input.
pub fn check_op(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> FdReport {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let l = build(&mut tape, &vars);
        tape.value(l).item().expect("scalar")
    };
    let mut rep = FdReport::default();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[i].numel() {
            let mut f = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[i].data_mut()[j] += d;
                eval(&xs)
            };
            let (e, kink) = fd_entry(&mut f, g.data()[j], FD_STEP);
            rep.checked += 1;
            if kink {
                rep.kinks += 1;
            }
            if let Some(e) = e {
                rep.max_rel_err = rep.max_rel_err.max(e);
            }
        }
    }
    rep
}

/// Checks the full training loss of `model` on `sentences` against central
/// differences on up to `per_tensor` random entries of each parameter.
pub fn check_model_loss(model: &DurationModel, corpus: &DurationCorpus, count: usize, per_tensor: usize, seed: u64) -> FdReport {
    let picks: Vec<&durflow::data::Sentence> = corpus.sentences.iter().take(count).collect();
    let (_, grads) = batch_loss(model, &picks, &mut ChaCha8Rng::seed_from_u64(seed), true).expect("loss");
    let grads = grads.expect("requested");
    let mut probe = model.clone();
    let mut pick_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut rep = FdReport::default();
    for (i, g) in grads.iter().enumerate() {
        let n = g.numel();
        let entries: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick_rng.random_range(0..n)).collect()
        };
        for j in entries {
            let base = probe.params().tensor(i).data()[j];
            let mut f = |d: f64| {
                probe.params_mut().tensor_mut(i).data_mut()[j] = base + d;
                let l = batch_loss(&probe, &picks, &mut ChaCha8Rng::seed_from_u64(seed), false).expect("loss").0;
                probe.params_mut().tensor_mut(i).data_mut()[j] = base;
                l
            };
            let (e, kink) = fd_entry(&mut f, g.data()[j], FD_STEP);
            let mut one = FdReport {
                checked: 1,
                kinks: usize::from(kink),
                ..Default::default()
            };
            if let Some(e) = e {
                one.max_rel_err = e;
            }
            rep.merge(one);
        }
    }
    rep
}

pub fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Like `uniform_tensor` but keeps every entry at least `gap` away from 0.
pub fn signed_tensor(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m: f64 = rng.random_range(gap..2.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// `P(round(X) = d)` for `X = exp(N(mu, sigma²))`, with everything below
/// 1.5 lumped into `d = 1` when `floor_one` is set.
pub fn rounded_lognormal_pmf(mu: f64, sigma: f64, d: u32, floor_one: bool) -> f64 {
    let n = std_normal();
    let cdf = |x: f64| if x <= 0.0 { 0.0 } else { n.cdf((x.ln() - mu) / sigma) };
    let lo = f64::from(d) - 0.5;
    let hi = f64::from(d) + 0.5;
    if floor_one && d == 1 {
        cdf(hi)
    } else if floor_one && d == 0 {
        0.0
    } else {
        cdf(hi) - cdf(lo.max(0.0))
    }
}

/// Exact law of a phone duration as `(frames, probability)` pairs.
pub fn phone_pmf(law: &DurationLaw) -> Vec<(u32, f64)> {
    let modes: Vec<(f64, f64, f64)> = match law {
        DurationLaw::LogNormal { mu, sigma } => vec![(1.0, *mu, *sigma)],
        DurationLaw::Mixture { modes } => modes.iter().map(|m| (m.weight, m.mu, m.sigma)).collect(),
        DurationLaw::NearZero { .. } => panic!("phones never use the near-zero law"),
    };
    let hi = modes.iter().map(|&(_, mu, s)| (mu + 9.0 * s).exp()).fold(0.0, f64::max).ceil() as u32 + 2;
    (1..=hi)
        .map(|d| {
            let p = modes.iter().map(|&(w, mu, s)| w * rounded_lognormal_pmf(mu, s, d, true)).sum();
            (d, p)
        })
        .filter(|&(_, p)| p > 0.0)
        .collect()
}

pub fn pmf_mean_std(pmf: &[(u32, f64)]) -> (f64, f64) {
    let m: f64 = pmf.iter().map(|&(d, p)| p * f64::from(d)).sum();
    let v: f64 = pmf.iter().map(|&(d, p)| p * (f64::from(d) - m).powi(2)).sum();
    (m, v.sqrt())
}

/// `E[ln d]` under an integer duration law.
pub fn pmf_log_mean(pmf: &[(u32, f64)]) -> f64 {
    pmf.iter().map(|&(d, p)| p * f64::from(d).ln()).sum()
}

/// Empirical law of each token id in a corpus, in the log domain used for
/// training targets (`ln d`, `ln 0.01` for zero).
pub fn empirical_log_laws(corpus: &DurationCorpus) -> BTreeMap<usize, Vec<(f64, f64)>> {
    corpus
        .durations_by_token()
        .into_iter()
        .map(|(id, ds)| {
            let n = ds.len() as f64;
            let mut c: BTreeMap<u32, f64> = BTreeMap::new();
            for d in ds {
                *c.entry(d).or_default() += 1.0 / n;
            }
            let law = c
                .into_iter()
                .map(|(d, p)| (if d == 0 { 0.01f64.ln() } else { f64::from(d).ln() }, p))
                .collect();
            (id, law)
        })
        .collect()
}

/// Quantisation residual of Euler sampling with the exact conditional
/// vector field of a discrete target law, per NFE. This is the best any
/// learned field can do when durations are independent given the token.
pub fn exact_field_residuals(
    laws: &BTreeMap<usize, Vec<(f64, f64)>>,
    tokens: &[usize],
    nfe_list: &[usize],
    temperature: f64,
    seed: u64,
) -> Vec<f64> {
    let sigma = 1e-4;
    nfe_list
        .iter()
        .map(|&nfe| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for id in tokens {
                let law = &laws[id];
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut x = temperature * z;
                for s in 0..nfe {
                    let t = s as f64 / nfe as f64;
                    let a = 1.0 - (1.0 - sigma) * t;
                    let logw: Vec<f64> = law.iter().map(|&(y, p)| p.ln() - (x - t * y).powi(2) / (2.0 * a * a)).collect();
                    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
                    let wsum: f64 = w.iter().sum();
                    let u: f64 = law
                        .iter()
                        .zip(&w)
                        .map(|(&(y, _), wi)| wi * (y - (1.0 - sigma) * (x - t * y) / a))
                        .sum::<f64>()
                        / wsum;
                    x += u / nfe as f64;
                }
                let d = x.exp();
                total += (d - d.round()).abs();
            }
            total / tokens.len() as f64
        })
        .collect()
}
