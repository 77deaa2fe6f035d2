//! Synthetic stand-in for a frozen base predictor and its dataset.
//!
//! True labels follow a Markov chain that only takes reachable transitions.
//! A simulated predictor then copies the true label, or errs with a fixed
//! probability; a tunable share of errors are steered towards labels that
//! break the rules relative to the previous predicted label. Features are a
//! class prototype of the *true* label plus Gaussian noise, so they carry
//! signal the correction layer can exploit even where the prediction is wrong.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, Trajectory};
use crate::error::{Error, Result};
use crate::rules::{Builtin, RuleSet};

const TRUTH_STREAM: u64 = 1;
const PREDICTOR_STREAM: u64 = 2;
const PROTOTYPE_STREAM: u64 = 3;

/// Maximum pairwise dot product between two class prototypes.
pub const PROTOTYPE_MAX_DOT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Feature dimension `M`.
    pub feature_dim: usize,
    /// Steps per trajectory `T`.
    pub length: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Probability that the true stage persists at each step.
    pub stay_prob: f64,
    /// Per-step probability that the predictor mislabels.
    pub predictor_error: f64,
    /// Share of predictor errors steered to create a rule violation.
    pub violation_bias: f64,
    /// Standard deviation of the per-coordinate feature noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            length: 100,
            n_train: 200,
            n_test: 50,
            stay_prob: 0.85,
            predictor_error: 0.2,
            violation_bias: 0.8,
            feature_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Harness settings for a builtin domain. Sleep: `M = 32`, stages persist
    /// with 0.85, 20% predictor error. Seizure: `M = 16`, phases persist with
    /// 0.97 (the ictal phase is absorbing), 25% predictor error.
    pub fn profile(which: Builtin) -> Self {
        match which {
            Builtin::Sleep => Self::default(),
            Builtin::Seizure => Self {
                feature_dim: 16,
                stay_prob: 0.97,
                predictor_error: 0.25,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        prob("stay_prob", self.stay_prob)?;
        prob("predictor_error", self.predictor_error)?;
        prob("violation_bias", self.violation_bias)?;
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::domain(format!(
                "feature_noise must be finite and >= 0, got {}",
                self.feature_noise
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::domain("feature_dim must be positive"));
        }
        if self.length == 0 {
            return Err(Error::domain("length must be positive"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub train: Dataset,
    pub test: Dataset,
    pub prototypes: Vec<Vec<f64>>,
}

/// Draws `n_train + n_test` true-label sequences.
///
/// A stage persists with probability `stay_prob`; otherwise the next stage is
/// drawn uniformly among its reachable successors other than itself. A stage
/// with no such successor is absorbing. Initial stages are uniform.
pub fn generate_truth(cfg: &SynthConfig, rules: &RuleSet) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let k = rules.num_labels();
    let successors: Vec<Vec<usize>> = (0..k)
        .map(|a| {
            (0..k)
                .filter(|&b| b != a && rules.reachable_unchecked(a, b))
                .collect()
        })
        .collect();
    if cfg.stay_prob < 1.0 && successors.iter().all(Vec::is_empty) {
        return Err(Error::Generation(
            "no label has a reachable successor, so the chain cannot move with stay_prob < 1"
                .into(),
        ));
    }

    let mut rng = cfg.rng(TRUTH_STREAM);
    let n = cfg.n_train + cfg.n_test;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut seq = Vec::with_capacity(cfg.length);
        let mut cur = rng.random_range(0..k);
        seq.push(cur);
        for _ in 1..cfg.length {
            let moves = !rng.random_bool(cfg.stay_prob);
            if moves {
                if let Some(&next) = successors[cur].choose(&mut rng) {
                    cur = next;
                }
            }
            seq.push(cur);
        }
        out.push(seq);
    }
    Ok(out)
}

/// Draws `k` random unit vectors in `R^dim` with pairwise dot products below
/// [`PROTOTYPE_MAX_DOT`], rejecting and redrawing each vector as needed.
pub fn prototypes(k: usize, dim: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    const MAX_ATTEMPTS: usize = 10_000;
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(k);
    while protos.len() < k {
        let mut attempts = 0;
        let v = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "could not place {k} prototypes in dimension {dim} with dot < {PROTOTYPE_MAX_DOT}"
                )));
            }
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            if protos.iter().all(|p| dot(p, &v) < PROTOTYPE_MAX_DOT) {
                break v;
            }
        };
        protos.push(v);
    }
    Ok(protos)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attaches predicted labels and features to true-label sequences.
///
/// Returns the trajectories (named `seq0000`, `seq0001`, ...) and the class
/// prototypes used for the features.
pub fn simulate_predictor(
    truth: &[Vec<usize>],
    cfg: &SynthConfig,
    rules: &RuleSet,
) -> Result<(Vec<Trajectory>, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if truth.is_empty() || truth.iter().any(Vec::is_empty) {
        return Err(Error::domain(
            "simulate_predictor needs non-empty truth sequences",
        ));
    }
    let k = rules.num_labels();
    let protos = prototypes(k, cfg.feature_dim, &mut cfg.rng(PROTOTYPE_STREAM))?;
    let mut rng = cfg.rng(PREDICTOR_STREAM);

    let mut trajs = Vec::with_capacity(truth.len());
    for (i, seq) in truth.iter().enumerate() {
        let mut instances: Vec<Instance> = Vec::with_capacity(seq.len());
        for &y in seq {
            if y >= k {
                return Err(Error::domain(format!(
                    "true label {y} out of range for K={k}"
                )));
            }
            let mut pred = y;
            if rng.random_bool(cfg.predictor_error) {
                let wrong: Vec<usize> = (0..k).filter(|&l| l != y).collect();
                let violating: Vec<usize> = match instances.last() {
                    Some(prev) => wrong
                        .iter()
                        .copied()
                        .filter(|&l| !rules.reachable_unchecked(prev.pred, l))
                        .collect(),
                    None => Vec::new(),
                };
                let steer = rng.random_bool(cfg.violation_bias);
                let pool = if steer && !violating.is_empty() {
                    &violating
                } else {
                    &wrong
                };
                pred = *pool.choose(&mut rng).expect("K >= 2 leaves a wrong label");
            }
            let features = protos[y]
                .iter()
                .map(|&c| {
                    let z: f64 = rng.sample(StandardNormal);
                    c + cfg.feature_noise * z
                })
                .collect();
            instances.push(Instance {
                features,
                pred,
                truth: Some(y),
            });
        }
        trajs.push(Trajectory {
            seq_id: format!("seq{i:04}"),
            instances,
        });
    }
    Ok((trajs, protos))
}

/// Generates train and test datasets; the first `n_train` sequences train.
pub fn generate(cfg: &SynthConfig, rules: &RuleSet) -> Result<SynthData> {
    let truth = generate_truth(cfg, rules)?;
    if truth.is_empty() {
        return Err(Error::domain("n_train + n_test must be positive"));
    }
    let (mut trajs, prototypes) = simulate_predictor(&truth, cfg, rules)?;
    let test = trajs.split_off(cfg.n_train);
    let alphabet = rules.alphabet().clone();
    Ok(SynthData {
        train: Dataset::new(alphabet.clone(), cfg.feature_dim, trajs)?,
        test: Dataset::new(alphabet, cfg.feature_dim, test)?,
        prototypes,
    })
}
