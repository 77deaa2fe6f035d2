//! The correction MDP: state assembly, rule-derived rewards and episode replay.
//!
//! The state at step `t` packs `[onehot(pred_t), features_t, onehot(a_{t-1})]`
//! into one `2K + M` vector. Before the first step the previous action is
//! taken to be the predictor's first label. Returns are undiscounted.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::rules::RuleSet;

/// Discount factor. Every future step counts as much as the present one.
pub const GAMMA: f64 = 1.0;

/// A packed `2K + M` state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    num_labels: usize,
    feature_dim: usize,
    data: Vec<f64>,
}

impl State {
    pub fn dim(num_labels: usize, feature_dim: usize) -> usize {
        2 * num_labels + feature_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn pred_onehot(&self) -> &[f64] {
        &self.data[..self.num_labels]
    }

    pub fn features(&self) -> &[f64] {
        &self.data[self.num_labels..self.num_labels + self.feature_dim]
    }

    pub fn prev_action_onehot(&self) -> &[f64] {
        &self.data[self.num_labels + self.feature_dim..]
    }

    pub fn pred(&self) -> usize {
        onehot_index(self.pred_onehot())
    }

    pub fn prev_action(&self) -> usize {
        onehot_index(self.prev_action_onehot())
    }
}

fn onehot_index(block: &[f64]) -> usize {
    block.iter().position(|&v| v == 1.0).expect("one-hot block")
}

/// Packs a state. `prev_action` is the agent's previous action (or the
/// episode's initial previous action at `t = 0`).
pub fn build_state(
    features: &[f64],
    pred: usize,
    prev_action: usize,
    num_labels: usize,
    feature_dim: usize,
) -> Result<State> {
    if features.len() != feature_dim {
        return Err(Error::domain(format!(
            "feature length {} != M={feature_dim}",
            features.len()
        )));
    }
    if pred >= num_labels || prev_action >= num_labels {
        return Err(Error::domain(format!(
            "labels ({pred}, {prev_action}) out of range for K={num_labels}"
        )));
    }
    let mut data = vec![0.0; State::dim(num_labels, feature_dim)];
    data[pred] = 1.0;
    data[num_labels..num_labels + feature_dim].copy_from_slice(features);
    data[num_labels + feature_dim + prev_action] = 1.0;
    Ok(State {
        num_labels,
        feature_dim,
        data,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    /// Six-case reward that distinguishes right and wrong predictions.
    #[default]
    Full,
    /// Four-case reward that ignores whether the prediction was right.
    Simplified,
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RewardVariant::Full),
            "simplified" => Ok(RewardVariant::Simplified),
            other => Err(Error::domain(format!("unknown reward variant {other:?}"))),
        }
    }
}

/// Which reward case a step fell into.
///
/// The first seven apply to [`RewardVariant::Full`]; `WrongPossible` and
/// `WrongImpossible` are the negative cases of [`RewardVariant::Simplified`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardCategory {
    /// `y = pred = a`
    MaintainCorrect,
    /// `y = a != pred`
    ReassignCorrect,
    /// `y != pred = a`
    KeepWrong,
    /// `y != pred != a`, `a` reachable
    ReassignWrongPossiblePredWrong,
    /// `y = pred != a`, `a` reachable
    ReassignWrongPossiblePredRight,
    /// `y != pred != a`, `a` unreachable
    ReassignWrongImpossible,
    /// `y = pred != a`, `a` unreachable. Not covered by the six reward cases;
    /// scored like the worst one.
    Uncovered,
    /// `a != y`, `a` reachable
    WrongPossible,
    /// `a != y`, `a` unreachable
    WrongImpossible,
}

impl RewardCategory {
    pub const ALL: [RewardCategory; 9] = [
        RewardCategory::MaintainCorrect,
        RewardCategory::ReassignCorrect,
        RewardCategory::KeepWrong,
        RewardCategory::ReassignWrongPossiblePredWrong,
        RewardCategory::ReassignWrongPossiblePredRight,
        RewardCategory::ReassignWrongImpossible,
        RewardCategory::Uncovered,
        RewardCategory::WrongPossible,
        RewardCategory::WrongImpossible,
    ];

    pub fn reward(self) -> i32 {
        use RewardCategory::*;
        match self {
            ReassignCorrect => 1,
            MaintainCorrect => 0,
            KeepWrong | WrongPossible => -1,
            ReassignWrongPossiblePredWrong | WrongImpossible => -2,
            ReassignWrongPossiblePredRight => -3,
            ReassignWrongImpossible | Uncovered => -4,
        }
    }

    pub fn name(self) -> &'static str {
        use RewardCategory::*;
        match self {
            MaintainCorrect => "maintain_correct",
            ReassignCorrect => "reassign_correct",
            KeepWrong => "keep_wrong",
            ReassignWrongPossiblePredWrong => "reassign_wrong_possible_pred_wrong",
            ReassignWrongPossiblePredRight => "reassign_wrong_possible_pred_right",
            ReassignWrongImpossible => "reassign_wrong_impossible",
            Uncovered => "uncovered",
            WrongPossible => "wrong_possible",
            WrongImpossible => "wrong_impossible",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for RewardCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies a step under the given reward variant.
pub fn classify(
    variant: RewardVariant,
    truth: usize,
    pred: usize,
    action: usize,
    prev_action: usize,
    rules: &RuleSet,
) -> Result<RewardCategory> {
    let k = rules.num_labels();
    if [truth, pred, action, prev_action].iter().any(|&l| l >= k) {
        return Err(Error::domain(format!(
            "labels (y={truth}, pred={pred}, a={action}, prev={prev_action}) out of range for K={k}"
        )));
    }
    let possible = rules.reachable_unchecked(prev_action, action);
    use RewardCategory::*;
    Ok(match variant {
        RewardVariant::Full => {
            if action == truth {
                if pred == truth {
                    MaintainCorrect
                } else {
                    ReassignCorrect
                }
            } else if action == pred {
                KeepWrong
            } else {
                match (pred == truth, possible) {
                    (false, true) => ReassignWrongPossiblePredWrong,
                    (true, true) => ReassignWrongPossiblePredRight,
                    (false, false) => ReassignWrongImpossible,
                    (true, false) => Uncovered,
                }
            }
        }
        RewardVariant::Simplified => {
            if action == truth {
                if pred == truth {
                    MaintainCorrect
                } else {
                    ReassignCorrect
                }
            } else if possible {
                WrongPossible
            } else {
                WrongImpossible
            }
        }
    })
}

/// Six-case reward (plus the uncovered case, scored -4).
pub fn reward_full(
    truth: usize,
    pred: usize,
    action: usize,
    prev_action: usize,
    rules: &RuleSet,
) -> Result<i32> {
    classify(RewardVariant::Full, truth, pred, action, prev_action, rules)
        .map(RewardCategory::reward)
}

/// Four-case reward: only correctness of the action and reachability matter.
pub fn reward_simplified(
    truth: usize,
    pred: usize,
    action: usize,
    prev_action: usize,
    rules: &RuleSet,
) -> Result<i32> {
    classify(
        RewardVariant::Simplified,
        truth,
        pred,
        action,
        prev_action,
        rules,
    )
    .map(RewardCategory::reward)
}

/// The reward function of the MDP.
#[derive(Clone, Debug)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    pub rules: RuleSet,
}

impl RewardSpec {
    pub fn new(variant: RewardVariant, rules: RuleSet) -> Self {
        Self { variant, rules }
    }

    pub fn gamma(&self) -> f64 {
        GAMMA
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub state: State,
    pub action: usize,
    pub reward: i32,
    pub category: RewardCategory,
}

/// One replay of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub seq_id: String,
    pub steps: Vec<StepRecord>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_return(&self) -> i64 {
        self.steps.iter().map(|s| i64::from(s.reward)).sum()
    }

    pub fn rewards(&self) -> Vec<i32> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// The action taken before step `t`; for `t = 0` the initial previous action.
    pub fn prev_action(&self, t: usize) -> usize {
        self.steps[t].state.prev_action()
    }
}

/// Replays `traj`, asking `select` for an action at every step.
///
/// The trajectory must carry true labels. Episodes never share state: the
/// previous action restarts from the trajectory's first predicted label.
pub fn run_episode<F>(traj: &Trajectory, mut select: F, spec: &RewardSpec) -> Result<Episode>
where
    F: FnMut(&State) -> Result<usize>,
{
    let first = traj
        .instances
        .first()
        .ok_or_else(|| Error::domain(format!("trajectory {:?} is empty", traj.seq_id)))?;
    let k = spec.rules.num_labels();
    let m = first.features.len();

    let mut prev_action = first.pred;
    let mut steps = Vec::with_capacity(traj.len());
    for (t, inst) in traj.instances.iter().enumerate() {
        let truth = inst.truth.ok_or_else(|| {
            Error::domain(format!(
                "trajectory {:?} step {t} has no true label",
                traj.seq_id
            ))
        })?;
        let state = build_state(&inst.features, inst.pred, prev_action, k, m)?;
        let action = select(&state)?;
        if action >= k {
            return Err(Error::domain(format!(
                "selector returned label {action} for K={k}"
            )));
        }
        let category = classify(
            spec.variant,
            truth,
            inst.pred,
            action,
            prev_action,
            &spec.rules,
        )?;
        steps.push(StepRecord {
            state,
            action,
            reward: category.reward(),
            category,
        });
        prev_action = action;
    }
    Ok(Episode {
        seq_id: traj.seq_id.clone(),
        steps,
    })
}

/// One line of the step trace format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub seq_id: String,
    pub t: usize,
    pub action: usize,
    pub reward: i32,
    pub category: RewardCategory,
}

pub fn write_trace<'a>(
    episodes: impl IntoIterator<Item = &'a Episode>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for ep in episodes {
        for (t, step) in ep.steps.iter().enumerate() {
            let rec = TraceRecord {
                seq_id: ep.seq_id.clone(),
                t,
                action: step.action,
                reward: step.reward,
                category: step.category,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

pub fn read_trace(input: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Load {
            record: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Load {
            record: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
