//! Evaluation quantities: classification metrics, clustering agreement,
//! rule-violation rates and the reward-category breakdown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{Episode, RewardCategory, TraceRecord};
use crate::error::{Error, Result};
use crate::rules::RuleSet;

/// Rule violations among consecutive label pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCount {
    pub violations: usize,
    pub pairs: usize,
}

impl ViolationCount {
    /// `violations / pairs`, or 0 when there are no pairs.
    pub fn rate(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.violations as f64 / self.pairs as f64
        }
    }
}

/// Counts consecutive pairs `(l_t, l_{t+1})` that the rules forbid.
/// Pairs never span two sequences.
pub fn violation_rate<S: AsRef<[usize]>>(
    sequences: &[S],
    rules: &RuleSet,
) -> Result<ViolationCount> {
    if sequences.is_empty() {
        return Err(Error::domain("violation_rate needs at least one sequence"));
    }
    let mut count = ViolationCount::default();
    for seq in sequences {
        for pair in seq.as_ref().windows(2) {
            count.pairs += 1;
            if !rules.is_reachable(pair[0], pair[1])? {
                count.violations += 1;
            }
        }
    }
    Ok(count)
}

fn check_lengths(truth: &[usize], assigned: &[usize]) -> Result<()> {
    if truth.len() != assigned.len() {
        return Err(Error::domain(format!(
            "label length mismatch: truth={}, assigned={}",
            truth.len(),
            assigned.len()
        )));
    }
    Ok(())
}

/// `K x K` counts; rows are true labels, columns assigned labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_labels: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], assigned: &[usize], num_labels: usize) -> Result<Self> {
        check_lengths(truth, assigned)?;
        let mut counts = vec![0; num_labels * num_labels];
        for (&y, &a) in truth.iter().zip(assigned) {
            if y >= num_labels || a >= num_labels {
                return Err(Error::domain(format!(
                    "label out of range for K={num_labels}"
                )));
            }
            counts[y * num_labels + a] += 1;
        }
        Ok(Self { num_labels, counts })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn get(&self, truth: usize, assigned: usize) -> usize {
        self.counts[truth * self.num_labels + assigned]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        (0..self.num_labels).map(|a| self.get(truth, a)).sum()
    }

    pub fn col_sum(&self, assigned: usize) -> usize {
        (0..self.num_labels).map(|y| self.get(y, assigned)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.num_labels).map(|i| self.get(i, i)).sum();
        diag as f64 / self.total() as f64
    }

    /// Cohen's kappa `(p_o - p_e) / (1 - p_e)`, with `p_e` the product of
    /// marginals. Defined as 1 when `p_e = 1` and the labelings agree.
    pub fn kappa(&self) -> f64 {
        let n = self.total() as f64;
        let p_o = self.accuracy();
        let p_e: f64 = (0..self.num_labels)
            .map(|i| (self.row_sum(i) as f64 / n) * (self.col_sum(i) as f64 / n))
            .sum();
        if p_e >= 1.0 {
            return if p_o >= 1.0 { 1.0 } else { 0.0 };
        }
        (p_o - p_e) / (1.0 - p_e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of instances whose true label is this class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
}

/// Per-class precision, recall and F1 plus accuracy and kappa. Undefined
/// ratios (no assigned or no true instances) are reported as 0.
pub fn classification_report(
    truth: &[usize],
    assigned: &[usize],
    num_labels: usize,
) -> Result<ClassificationReport> {
    if truth.is_empty() {
        return Err(Error::domain(
            "classification_report needs at least one instance",
        ));
    }
    let confusion = ConfusionMatrix::new(truth, assigned, num_labels)?;
    let per_class = (0..num_labels)
        .map(|c| {
            let tp = confusion.get(c, c) as f64;
            let assigned = confusion.col_sum(c);
            let support = confusion.row_sum(c);
            let precision = if assigned == 0 {
                0.0
            } else {
                tp / assigned as f64
            };
            let recall = if support == 0 {
                0.0
            } else {
                tp / support as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    Ok(ClassificationReport {
        per_class,
        accuracy: confusion.accuracy(),
        kappa: confusion.kappa(),
        confusion,
    })
}

struct Contingency {
    n: usize,
    cells: BTreeMap<(usize, usize), usize>,
    rows: BTreeMap<usize, usize>,
    cols: BTreeMap<usize, usize>,
}

fn contingency(left: &[usize], right: &[usize]) -> Contingency {
    let mut c = Contingency {
        n: left.len(),
        cells: BTreeMap::new(),
        rows: BTreeMap::new(),
        cols: BTreeMap::new(),
    };
    for (&l, &r) in left.iter().zip(right) {
        *c.cells.entry((l, r)).or_default() += 1;
        *c.rows.entry(l).or_default() += 1;
        *c.cols.entry(r).or_default() += 1;
    }
    c
}

/// Whether the two labelings induce the same partition, up to renaming.
fn same_partition(c: &Contingency) -> bool {
    c.cells.len() == c.rows.len() && c.cells.len() == c.cols.len()
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(T; A) / sqrt(H(T) H(A))`, natural logs.
///
/// Identical partitions score exactly 1. Otherwise, if either labeling has
/// zero entropy the score is 0.
pub fn nmi(truth: &[usize], assigned: &[usize]) -> Result<f64> {
    check_lengths(truth, assigned)?;
    if truth.is_empty() {
        return Err(Error::domain("nmi needs at least one instance"));
    }
    let c = contingency(truth, assigned);
    if same_partition(&c) {
        return Ok(1.0);
    }
    let n = c.n as f64;
    let (h_t, h_a) = (entropy(&c.rows, n), entropy(&c.cols, n));
    if h_t == 0.0 || h_a == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = c
        .cells
        .iter()
        .map(|(&(t, a), &k)| {
            let p = k as f64 / n;
            let pt = c.rows[&t] as f64 / n;
            let pa = c.cols[&a] as f64 / n;
            p * (p / (pt * pa)).ln()
        })
        .sum();
    Ok((mi / (h_t * h_a).sqrt()).clamp(0.0, 1.0))
}

fn choose2(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index, permutation-adjusted for chance.
///
/// Identical partitions score exactly 1. When the chance correction is
/// degenerate (both labelings trivial in the same way) and the partitions
/// differ, the score is 0.
pub fn ari(truth: &[usize], assigned: &[usize]) -> Result<f64> {
    check_lengths(truth, assigned)?;
    if truth.is_empty() {
        return Err(Error::domain("ari needs at least one instance"));
    }
    let c = contingency(truth, assigned);
    if same_partition(&c) {
        return Ok(1.0);
    }
    let index: f64 = c.cells.values().map(|&k| choose2(k)).sum();
    let sum_rows: f64 = c.rows.values().map(|&k| choose2(k)).sum();
    let sum_cols: f64 = c.cols.values().map(|&k| choose2(k)).sum();
    let expected = sum_rows * sum_cols / choose2(c.n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((index - expected) / denom)
}

/// Step counts per reward category.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    counts: [usize; RewardCategory::ALL.len()],
}

impl CategoryCounts {
    fn slot(category: RewardCategory) -> usize {
        RewardCategory::ALL
            .iter()
            .position(|&c| c == category)
            .expect("ALL lists every category")
    }

    pub fn add(&mut self, category: RewardCategory) {
        self.counts[Self::slot(category)] += 1;
    }

    pub fn get(&self, category: RewardCategory) -> usize {
        self.counts[Self::slot(category)]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RewardCategory, usize)> + '_ {
        RewardCategory::ALL
            .into_iter()
            .zip(self.counts.iter().copied())
    }

    /// `sum_c count_c * reward_c`.
    pub fn total_return(&self) -> i64 {
        self.iter()
            .map(|(c, n)| i64::from(c.reward()) * n as i64)
            .sum()
    }

    pub fn merge(&mut self, other: &CategoryCounts) {
        self.counts
            .iter_mut()
            .zip(other.counts)
            .for_each(|(a, b)| *a += b);
    }

    pub fn from_episodes<'a>(episodes: impl IntoIterator<Item = &'a Episode>) -> Result<Self> {
        let mut out = Self::default();
        for ep in episodes {
            for step in &ep.steps {
                if step.reward != step.category.reward() {
                    return Err(Error::domain(format!(
                        "internal invariant breach: reward {} recorded for category {}",
                        step.reward, step.category
                    )));
                }
                out.add(step.category);
            }
        }
        Ok(out)
    }
}

/// Tallies a step trace by reward category.
pub fn reward_category_counts(trace: &[TraceRecord]) -> Result<CategoryCounts> {
    let mut out = CategoryCounts::default();
    for rec in trace {
        if rec.reward != rec.category.reward() {
            return Err(Error::domain(format!(
                "internal invariant breach at {:?} t={}: reward {} recorded for category {}",
                rec.seq_id, rec.t, rec.reward, rec.category
            )));
        }
        out.add(rec.category);
    }
    Ok(out)
}
