//! REINFORCE with a learned state-value baseline and a switch penalty.
//!
//! Per trajectory the policy minimizes
//!
//! ```text
//! L_pi = -sum_t (G_t - b(s_t)) log pi(a_t | s_t) + alpha * sum_t [a_t != a_{t-1}] log pi(a_t | s_t)
//! ```
//!
//! with `G_t` the undiscounted return-to-go, and the baseline regresses onto
//! the returns with `L_b = sum_t (b(s_t) - G_t)^2`. Baseline values enter
//! `L_pi` as constants.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::env::{build_state, run_episode, Episode, RewardSpec, RewardVariant};
use crate::error::{Error, Result};
use crate::metrics::violation_rate;
use crate::nn::{
    sample_action, Adam, Baseline, LrSchedule, Policy, PolicyInit, PolicyOutput, Score,
};
use crate::rules::{Builtin, LabelAlphabet, RuleSet};

const INIT_POLICY_STREAM: u64 = 11;
const INIT_BASELINE_STREAM: u64 = 12;
const SAMPLING_STREAM: u64 = 13;

/// Learning rates swept by default.
pub const SWEEP_LRS: [f64; 3] = [3e-5, 3e-4, 3e-3];
/// Switch-penalty weights swept by default.
pub const SWEEP_ALPHAS: [f64; 3] = [10.0, 1.0, 0.1];
/// Softmax temperatures swept by default.
pub const SWEEP_TEMPERATURES: [f64; 3] = [10.0, 1.0, 0.1];
/// Exploration rates swept by default.
pub const SWEEP_EPSILONS: [f64; 3] = [0.5, 0.1, 0.01];
/// Seeds per sweep cell by default.
pub const SWEEP_SEEDS: usize = 10;

/// When gradient updates are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One baseline step then one policy step after every trajectory.
    #[default]
    PerTrajectory,
    /// Gradients summed over the whole epoch, one step of each at its end.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub reward: RewardVariant,
    pub seed: u64,
    /// Trajectories longer than this are split before training.
    pub max_len: Option<usize>,
    pub update: UpdateMode,
    pub score: Score,
    pub init: PolicyInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            alpha: 1.0,
            temperature: 1.0,
            epsilon: 0.1,
            epochs: 50,
            reward: RewardVariant::Full,
            seed: 0,
            max_len: None,
            update: UpdateMode::PerTrajectory,
            score: Score::Behavior,
            init: PolicyInit::Maintain,
        }
    }
}

impl TrainConfig {
    /// Defaults with the reward variant used for a builtin domain: the full
    /// table for sleep, the simplified one for seizure.
    pub fn profile(which: Builtin) -> Self {
        Self {
            reward: match which {
                Builtin::Sleep => RewardVariant::Full,
                Builtin::Seizure => RewardVariant::Simplified,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::domain(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::domain(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::domain(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.max_len.is_some_and(|m| m < 2) {
            return Err(Error::domain("max_len must be at least 2"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.lr)
    }
}

/// Aggregates over one training epoch. Returns, accuracy and violations
/// describe the sampled (exploring) actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_return: f64,
    pub accuracy: f64,
    pub violation_rate: f64,
    pub policy_loss: f64,
    pub baseline_loss: f64,
    pub penalty_term: f64,
    pub lr: f64,
}

/// The trainable state: both networks and their optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: Policy,
    pub baseline: Baseline,
    pub policy_adam: Adam,
    pub baseline_adam: Adam,
}

impl Agent {
    pub fn new(
        num_labels: usize,
        feature_dim: usize,
        temperature: f64,
        init: PolicyInit,
        seed: u64,
    ) -> Result<Self> {
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(INIT_POLICY_STREAM);
        let mut baseline_rng = ChaCha8Rng::seed_from_u64(seed);
        baseline_rng.set_stream(INIT_BASELINE_STREAM);
        let policy = match init {
            PolicyInit::Maintain => {
                Policy::maintaining(num_labels, feature_dim, temperature, &mut policy_rng)?
            }
            PolicyInit::Random => {
                Policy::new(num_labels, feature_dim, temperature, &mut policy_rng)?
            }
        };
        let baseline = Baseline::new(num_labels, feature_dim, &mut baseline_rng)?;
        Ok(Self {
            policy_adam: Adam::new(policy.net.params().len()),
            baseline_adam: Adam::new(baseline.net.params().len()),
            policy,
            baseline,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.policy.num_labels()
    }

    pub fn state_dim(&self) -> usize {
        self.policy.net.input_dim()
    }

    /// Greedy end-to-end correction of one trajectory. True labels are not needed.
    pub fn correct(&self, traj: &Trajectory) -> Result<Vec<usize>> {
        let k = self.num_labels();
        let first = traj
            .instances
            .first()
            .ok_or_else(|| Error::domain(format!("trajectory {:?} is empty", traj.seq_id)))?;
        let m = first.features.len();
        if 2 * k + m != self.state_dim() {
            return Err(Error::domain(format!(
                "trajectory {:?} has M={m}, agent expects M={}",
                traj.seq_id,
                self.state_dim() - 2 * k
            )));
        }
        let mut prev = first.pred;
        let mut out = Vec::with_capacity(traj.len());
        for inst in &traj.instances {
            let state = build_state(&inst.features, inst.pred, prev, k, m)?;
            let a = self.policy.act_greedy(state.as_slice())?;
            out.push(a);
            prev = a;
        }
        Ok(out)
    }

    /// Greedy replay with rewards; the trajectory must carry true labels.
    pub fn evaluate(&self, traj: &Trajectory, spec: &RewardSpec) -> Result<Episode> {
        run_episode(traj, |s| self.policy.act_greedy(s.as_slice()), spec)
    }
}

/// Undiscounted suffix sums `G_t = sum_{t' >= t} r_t'`.
pub fn returns_to_go(rewards: &[i32]) -> Vec<f64> {
    let mut acc: i64 = 0;
    let mut out = vec![0.0; rewards.len()];
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc += i64::from(r);
        out[t] = acc as f64;
    }
    out
}

/// Per-step coefficients on `log pi(a_t | s_t)` in the policy loss,
/// `-(G_t - b_t) + alpha * [a_t != a_{t-1}]`.
pub fn policy_objective_coeffs(
    episode: &Episode,
    returns: &[f64],
    baseline_values: &[f64],
    alpha: f64,
) -> Vec<f64> {
    episode
        .steps
        .iter()
        .zip(returns.iter().zip(baseline_values))
        .map(|(step, (&g, &b))| {
            let switched = step.action != step.state.prev_action();
            -(g - b) + if switched { alpha } else { 0.0 }
        })
        .collect()
}

/// Loss components and gradients of the policy objective over one episode.
#[derive(Clone, Debug)]
pub struct PolicyObjective {
    /// `-sum_t (G_t - b_t) log p`
    pub reinforce: f64,
    /// `alpha * sum_t [switch] log p`
    pub penalty: f64,
    pub grad: Vec<f64>,
}

/// Assembles the policy loss from cached forward passes aligned with
/// `episode`. `score` and `epsilon` pick the log-likelihood `log p` of each
/// sampled action.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective(
    policy: &Policy,
    episode: &Episode,
    outputs: &[PolicyOutput],
    returns: &[f64],
    baseline_values: &[f64],
    alpha: f64,
    score: Score,
    epsilon: f64,
) -> Result<PolicyObjective> {
    let n = episode.len();
    if outputs.len() != n || returns.len() != n || baseline_values.len() != n {
        return Err(Error::domain("policy objective inputs are not aligned"));
    }
    let coefs = policy_objective_coeffs(episode, returns, baseline_values, alpha);
    let mut grad = policy.net.zero_grad();
    let (mut reinforce, mut penalty) = (0.0, 0.0);
    for (t, step) in episode.steps.iter().enumerate() {
        let log_p = policy.backward_scored(
            &outputs[t],
            step.action,
            coefs[t],
            score,
            epsilon,
            &mut grad,
        )?;
        reinforce -= (returns[t] - baseline_values[t]) * log_p;
        if step.action != step.state.prev_action() {
            penalty += alpha * log_p;
        }
    }
    Ok(PolicyObjective {
        reinforce,
        penalty,
        grad,
    })
}

/// `sum_t (b(s_t) - G_t)^2` and its gradient; also returns the baseline values.
pub fn baseline_objective(
    baseline: &Baseline,
    episode: &Episode,
    returns: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if returns.len() != episode.len() {
        return Err(Error::domain("baseline objective inputs are not aligned"));
    }
    let mut grad = baseline.net.zero_grad();
    let mut loss = 0.0;
    let mut values = Vec::with_capacity(returns.len());
    for (step, &g) in episode.steps.iter().zip(returns) {
        let (value, cache) = baseline.forward(step.state.as_slice())?;
        loss += baseline.backward_squared_error(&cache, g, &mut grad)?;
        values.push(value);
    }
    Ok((loss, grad, values))
}

fn numerical(seq_id: &str, err: Error) -> Error {
    match err {
        Error::Numerical { message, .. } => Error::Numerical {
            seq_id: seq_id.to_string(),
            message,
        },
        other => other,
    }
}

fn check_finite(seq_id: &str, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            seq_id: seq_id.to_string(),
            message: format!("{what} is {value}"),
        })
    }
}

fn add_into(acc: &mut [f64], grad: &[f64]) {
    acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g);
}

/// Runs one epoch of on-policy training over `dataset` in a shuffled order.
pub fn train_epoch(
    dataset: &Dataset,
    agent: &mut Agent,
    cfg: &TrainConfig,
    epoch: usize,
    rules: &RuleSet,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if dataset.trajectories.is_empty() {
        return Err(Error::domain("training dataset is empty"));
    }
    let spec = RewardSpec::new(cfg.reward, rules.clone());
    let lr = cfg.schedule().rate(epoch);

    let mut order: Vec<usize> = (0..dataset.trajectories.len()).collect();
    order.shuffle(rng);

    let mut total_return = 0.0;
    let (mut correct, mut steps) = (0usize, 0usize);
    let mut action_seqs = Vec::with_capacity(order.len());
    let (mut policy_loss, mut baseline_loss, mut penalty_term) = (0.0, 0.0, 0.0);
    let mut epoch_policy_grad = agent.policy.net.zero_grad();
    let mut epoch_baseline_grad = agent.baseline.net.zero_grad();

    for &idx in &order {
        let traj = &dataset.trajectories[idx];
        let mut outputs = Vec::with_capacity(traj.len());
        let episode = run_episode(
            traj,
            |state| {
                let out = agent.policy.forward(state.as_slice())?;
                let a = sample_action(&out.probs, cfg.epsilon, rng);
                outputs.push(out);
                Ok(a)
            },
            &spec,
        )?;

        let returns = returns_to_go(&episode.rewards());
        let (b_loss, b_grad, values) = baseline_objective(&agent.baseline, &episode, &returns)?;
        let objective = policy_objective(
            &agent.policy,
            &episode,
            &outputs,
            &returns,
            &values,
            cfg.alpha,
            cfg.score,
            cfg.epsilon,
        )?;
        check_finite(&traj.seq_id, "baseline loss", b_loss)?;
        check_finite(
            &traj.seq_id,
            "policy loss",
            objective.reinforce + objective.penalty,
        )?;

        match cfg.update {
            UpdateMode::PerTrajectory => {
                agent
                    .baseline_adam
                    .step(agent.baseline.net.params_mut(), &b_grad, lr)
                    .map_err(|e| numerical(&traj.seq_id, e))?;
                agent
                    .policy_adam
                    .step(agent.policy.net.params_mut(), &objective.grad, lr)
                    .map_err(|e| numerical(&traj.seq_id, e))?;
            }
            UpdateMode::PerEpoch => {
                add_into(&mut epoch_baseline_grad, &b_grad);
                add_into(&mut epoch_policy_grad, &objective.grad);
            }
        }

        total_return += episode.total_return() as f64;
        let truths = traj.truths().expect("run_episode checked truths");
        let actions = episode.actions();
        correct += actions.iter().zip(&truths).filter(|(a, y)| a == y).count();
        steps += actions.len();
        action_seqs.push(actions);
        policy_loss += objective.reinforce;
        baseline_loss += b_loss;
        penalty_term += objective.penalty;
    }

    if cfg.update == UpdateMode::PerEpoch {
        let last = &dataset.trajectories[*order.last().expect("non-empty")].seq_id;
        agent
            .baseline_adam
            .step(agent.baseline.net.params_mut(), &epoch_baseline_grad, lr)
            .map_err(|e| numerical(last, e))?;
        agent
            .policy_adam
            .step(agent.policy.net.params_mut(), &epoch_policy_grad, lr)
            .map_err(|e| numerical(last, e))?;
    }

    let n = order.len() as f64;
    Ok(EpochStats {
        epoch,
        mean_return: total_return / n,
        accuracy: correct as f64 / steps as f64,
        violation_rate: violation_rate(&action_seqs, rules)?.rate(),
        policy_loss: policy_loss / n,
        baseline_loss: baseline_loss / n,
        penalty_term: penalty_term / n,
        lr,
    })
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub stats: Vec<EpochStats>,
}

/// Trains a fresh agent for `cfg.epochs` epochs.
pub fn train(dataset: &Dataset, rules: &RuleSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_alphabet(rules.alphabet(), &dataset.alphabet)?;
    let data = match cfg.max_len {
        Some(max_len) => dataset.segmented(max_len)?,
        None => dataset.clone(),
    };
    let mut agent = Agent::new(
        data.num_labels(),
        data.feature_dim,
        cfg.temperature,
        cfg.init,
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SAMPLING_STREAM);
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        stats.push(train_epoch(&data, &mut agent, cfg, epoch, rules, &mut rng)?);
    }
    Ok(TrainOutcome { agent, stats })
}

pub(crate) fn check_alphabet(expected: &LabelAlphabet, found: &LabelAlphabet) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "alphabet mismatch: expected {:?}, found {:?}",
            expected.names(),
            found.names()
        )))
    }
}

/// A trained agent plus what is needed to apply it to new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub alphabet: LabelAlphabet,
    pub feature_dim: usize,
    pub reward: RewardVariant,
    pub epochs_trained: usize,
    pub agent: Agent,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(
        alphabet: LabelAlphabet,
        feature_dim: usize,
        reward: RewardVariant,
        epochs_trained: usize,
        agent: Agent,
    ) -> Self {
        Self {
            version: Self::VERSION,
            alphabet,
            feature_dim,
            reward,
            epochs_trained,
            agent,
        }
    }

    /// Writes to a temporary sibling and renames, so an interrupted write
    /// never leaves a partial file under `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        let bytes = serde_json::to_vec(self).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if ckpt.version != Self::VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("unsupported checkpoint version {}", ckpt.version),
            });
        }
        if ckpt.agent.num_labels() != ckpt.alphabet.len()
            || ckpt.agent.state_dim() != 2 * ckpt.alphabet.len() + ckpt.feature_dim
        {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "network shapes do not match alphabet and feature dimension".into(),
            });
        }
        Ok(ckpt)
    }

    /// Errors unless `dataset` uses this checkpoint's alphabet and feature dimension.
    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        check_alphabet(&self.alphabet, &dataset.alphabet)?;
        if dataset.feature_dim != self.feature_dim {
            return Err(Error::domain(format!(
                "feature dimension mismatch: checkpoint M={}, dataset M={}",
                self.feature_dim, dataset.feature_dim
            )));
        }
        Ok(())
    }
}

/// One cell of a hyperparameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cell: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Grids for [`sweep_cells`]; the default is 81 cells times 10 seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub lrs: Vec<f64>,
    pub alphas: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            lrs: SWEEP_LRS.to_vec(),
            alphas: SWEEP_ALPHAS.to_vec(),
            temperatures: SWEEP_TEMPERATURES.to_vec(),
            epsilons: SWEEP_EPSILONS.to_vec(),
            seeds: SWEEP_SEEDS,
        }
    }
}

/// Enumerates every (lr, alpha, temperature, epsilon) cell times every seed.
/// Seeds run `base.seed .. base.seed + grid.seeds`.
pub fn sweep_cells(base: &TrainConfig, grid: &SweepGrid) -> Vec<SweepCell> {
    let mut out = Vec::new();
    let mut cell = 0;
    for &lr in &grid.lrs {
        for &alpha in &grid.alphas {
            for &temperature in &grid.temperatures {
                for &epsilon in &grid.epsilons {
                    for s in 0..grid.seeds as u64 {
                        let seed = base.seed + s;
                        out.push(SweepCell {
                            cell,
                            seed,
                            config: TrainConfig {
                                lr,
                                alpha,
                                temperature,
                                epsilon,
                                seed,
                                ..base.clone()
                            },
                        });
                    }
                    cell += 1;
                }
            }
        }
    }
    out
}
