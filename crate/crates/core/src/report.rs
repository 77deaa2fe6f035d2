//! Evaluation of a trained agent and the delimited report files.
//!
//! Every table is tab-separated with a fixed column order and starts with a
//! metadata block of `# key: value` lines. Floats are written in Rust's
//! shortest round-trip form, so parsing a report recovers every number exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::env::{run_episode, Episode, RewardSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    ari, classification_report, nmi, violation_rate, CategoryCounts, ClassificationReport,
    ViolationCount,
};
use crate::rules::{LabelAlphabet, RuleSet};
use crate::train::{check_alphabet, Agent, EpochStats};

pub const STATS_COLUMNS: [&str; 8] = [
    "epoch",
    "mean_return",
    "accuracy",
    "violation_rate",
    "policy_loss",
    "baseline_loss",
    "penalty_term",
    "lr",
];

pub const SUMMARY_FILE: &str = "summary.tsv";
pub const PER_CLASS_FILE: &str = "per_class.tsv";
pub const CATEGORIES_FILE: &str = "categories.tsv";
pub const TEXT_FILE: &str = "summary.txt";

/// Key/value provenance written at the top of every table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportMeta {
    pub entries: Vec<(String, String)>,
}

impl ReportMeta {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        let mut meta = Self::default();
        meta.push("config_hash", config_hash);
        meta.push("seed", seed.to_string());
        meta.push("code_version", env!("CARGO_PKG_VERSION"));
        meta.push("nmi_normalization", "geometric_mean_natural_log");
        meta
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn write_into(&self, out: &mut String) {
        for (k, v) in &self.entries {
            let _ = writeln!(out, "# {k}: {v}");
        }
    }
}

/// A parsed delimited table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub meta: ReportMeta,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut meta = ReportMeta::default();
        let mut header = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once(": ")
                    .ok_or_else(|| format!("bad metadata line {line:?}"))?;
                meta.push(k, v);
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            match &header {
                None => header = Some(fields),
                Some(h) if h.len() != fields.len() => {
                    return Err(format!(
                        "row has {} fields, header has {}",
                        fields.len(),
                        h.len()
                    ))
                }
                Some(_) => rows.push(fields),
            }
        }
        Ok(Self {
            meta,
            header: header.ok_or("missing header row")?,
            rows,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Table::parse(&text).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders the per-epoch stats table.
pub fn stats_table(meta: &ReportMeta, stats: &[EpochStats]) -> String {
    let mut out = String::new();
    meta.write_into(&mut out);
    out.push_str(&STATS_COLUMNS.join("\t"));
    out.push('\n');
    for s in stats {
        let fields = [
            s.epoch.to_string(),
            float(s.mean_return),
            float(s.accuracy),
            float(s.violation_rate),
            float(s.policy_loss),
            float(s.baseline_loss),
            float(s.penalty_term),
            float(s.lr),
        ];
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_stats(path: impl AsRef<Path>, meta: &ReportMeta, stats: &[EpochStats]) -> Result<()> {
    write_file(path.as_ref(), &stats_table(meta, stats))
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<Vec<EpochStats>> {
    let path = path.as_ref();
    let table = Table::read(path)?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if table.header != STATS_COLUMNS {
        return Err(bad(format!("unexpected columns {:?}", table.header)));
    }
    table
        .rows
        .iter()
        .map(|row| {
            let f = |i: usize| {
                row[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{}: {e}", row[i])))
            };
            Ok(EpochStats {
                epoch: row[0]
                    .parse()
                    .map_err(|e| bad(format!("{}: {e}", row[0])))?,
                mean_return: f(1)?,
                accuracy: f(2)?,
                violation_rate: f(3)?,
                policy_loss: f(4)?,
                baseline_loss: f(5)?,
                penalty_term: f(6)?,
                lr: f(7)?,
            })
        })
        .collect()
}

/// Scores of one labeling of a dataset (base predictor or corrected).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelingScores {
    /// Present only when the dataset carries true labels.
    pub classification: Option<ClassificationReport>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub mean_return: Option<f64>,
    pub violations: ViolationCount,
}

/// Base predictor versus corrected labels on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub alphabet: LabelAlphabet,
    pub predictor: LabelingScores,
    pub corrected: LabelingScores,
    /// Reward categories of the corrected actions, when true labels exist.
    pub categories: Option<CategoryCounts>,
}

/// Output of [`evaluate`].
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Corrected labels per trajectory, in dataset order.
    pub corrected: Vec<Vec<usize>>,
    /// Greedy episodes, when true labels exist.
    pub episodes: Vec<Episode>,
}

fn score(
    labels: &[Vec<usize>],
    truths: Option<&[Vec<usize>]>,
    episodes: Option<&[Episode]>,
    num_labels: usize,
    rules: &RuleSet,
) -> Result<LabelingScores> {
    let violations = violation_rate(labels, rules)?;
    let Some(truths) = truths else {
        return Ok(LabelingScores {
            classification: None,
            nmi: None,
            ari: None,
            mean_return: None,
            violations,
        });
    };
    let flat_y: Vec<usize> = truths.iter().flatten().copied().collect();
    let flat_a: Vec<usize> = labels.iter().flatten().copied().collect();
    let mean_return = episodes
        .map(|eps| eps.iter().map(|e| e.total_return() as f64).sum::<f64>() / eps.len() as f64);
    Ok(LabelingScores {
        classification: Some(classification_report(&flat_y, &flat_a, num_labels)?),
        nmi: Some(nmi(&flat_y, &flat_a)?),
        ari: Some(ari(&flat_y, &flat_a)?),
        mean_return,
        violations,
    })
}

/// Runs greedy correction over `dataset` and scores both labelings.
pub fn evaluate(agent: &Agent, dataset: &Dataset, spec: &RewardSpec) -> Result<Evaluation> {
    check_alphabet(spec.rules.alphabet(), &dataset.alphabet)?;
    if dataset.trajectories.is_empty() {
        return Err(Error::domain("evaluation dataset is empty"));
    }
    let k = dataset.num_labels();
    let preds: Vec<Vec<usize>> = dataset.trajectories.iter().map(|t| t.preds()).collect();

    if !dataset.has_truth() {
        let corrected = dataset
            .trajectories
            .iter()
            .map(|t| agent.correct(t))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Evaluation {
            report: EvalReport {
                alphabet: dataset.alphabet.clone(),
                predictor: score(&preds, None, None, k, &spec.rules)?,
                corrected: score(&corrected, None, None, k, &spec.rules)?,
                categories: None,
            },
            corrected,
            episodes: Vec::new(),
        });
    }

    let truths: Vec<Vec<usize>> = dataset
        .trajectories
        .iter()
        .map(|t| t.truths().expect("dataset validated truth presence"))
        .collect();
    let episodes = dataset
        .trajectories
        .iter()
        .map(|t| agent.evaluate(t, spec))
        .collect::<Result<Vec<_>>>()?;
    let copies = dataset
        .trajectories
        .iter()
        .map(|t| run_episode(t, |s| Ok(s.pred()), spec))
        .collect::<Result<Vec<_>>>()?;
    let corrected: Vec<Vec<usize>> = episodes.iter().map(Episode::actions).collect();
    Ok(Evaluation {
        report: EvalReport {
            alphabet: dataset.alphabet.clone(),
            predictor: score(&preds, Some(&truths), Some(&copies), k, &spec.rules)?,
            corrected: score(&corrected, Some(&truths), Some(&episodes), k, &spec.rules)?,
            categories: Some(CategoryCounts::from_episodes(&episodes)?),
        },
        corrected,
        episodes,
    })
}

fn summary_rows(report: &EvalReport) -> Vec<(&'static str, String, String)> {
    let (p, c) = (&report.predictor, &report.corrected);
    let mut rows = Vec::new();
    if let (Some(pc), Some(cc)) = (&p.classification, &c.classification) {
        rows.push(("accuracy", float(pc.accuracy), float(cc.accuracy)));
        rows.push(("kappa", float(pc.kappa), float(cc.kappa)));
    }
    if let (Some(pn), Some(cn)) = (p.nmi, c.nmi) {
        rows.push(("nmi", float(pn), float(cn)));
    }
    if let (Some(pa), Some(ca)) = (p.ari, c.ari) {
        rows.push(("ari", float(pa), float(ca)));
    }
    if let (Some(pr), Some(cr)) = (p.mean_return, c.mean_return) {
        rows.push(("mean_return", float(pr), float(cr)));
    }
    rows.push((
        "violation_rate",
        float(p.violations.rate()),
        float(c.violations.rate()),
    ));
    rows.push((
        "violations",
        p.violations.violations.to_string(),
        c.violations.violations.to_string(),
    ));
    rows.push((
        "pairs",
        p.violations.pairs.to_string(),
        c.violations.pairs.to_string(),
    ));
    rows
}

/// Paths written by [`write_report`].
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub per_class: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub text: PathBuf,
}

/// Writes the summary, per-class and category tables plus a plain-text
/// digest into `dir`. Tables needing true labels are skipped without them.
pub fn write_report(
    dir: impl AsRef<Path>,
    meta: &ReportMeta,
    report: &EvalReport,
) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let rows = summary_rows(report);
    let mut summary = String::new();
    meta.write_into(&mut summary);
    summary.push_str("metric\tpredictor\tcorrected\n");
    for (name, p, c) in &rows {
        let _ = writeln!(summary, "{name}\t{p}\t{c}");
    }
    let summary_path = dir.join(SUMMARY_FILE);
    write_file(&summary_path, &summary)?;

    let mut per_class_path = None;
    if let (Some(pc), Some(cc)) = (
        &report.predictor.classification,
        &report.corrected.classification,
    ) {
        let mut text = String::new();
        meta.write_into(&mut text);
        text.push_str("source\tclass\tprecision\trecall\tf1\tsupport\n");
        for (source, r) in [("predictor", pc), ("corrected", cc)] {
            for (name, m) in report.alphabet.names().iter().zip(&r.per_class) {
                let _ = writeln!(
                    text,
                    "{source}\t{name}\t{}\t{}\t{}\t{}",
                    float(m.precision),
                    float(m.recall),
                    float(m.f1),
                    m.support
                );
            }
        }
        let path = dir.join(PER_CLASS_FILE);
        write_file(&path, &text)?;
        per_class_path = Some(path);
    }

    let mut categories_path = None;
    if let Some(counts) = &report.categories {
        let mut text = String::new();
        meta.write_into(&mut text);
        text.push_str("category\treward\tcount\n");
        for (category, n) in counts.iter() {
            let _ = writeln!(text, "{category}\t{}\t{n}", category.reward());
        }
        let path = dir.join(CATEGORIES_FILE);
        write_file(&path, &text)?;
        categories_path = Some(path);
    }

    let mut digest = String::new();
    for (k, v) in &meta.entries {
        let _ = writeln!(digest, "{k}: {v}");
    }
    digest.push('\n');
    let _ = writeln!(
        digest,
        "{:<16}{:>24}{:>24}",
        "metric", "predictor", "corrected"
    );
    for (name, p, c) in &rows {
        let _ = writeln!(digest, "{name:<16}{p:>24}{c:>24}");
    }
    if let Some(counts) = &report.categories {
        digest.push('\n');
        for (category, n) in counts.iter().filter(|&(_, n)| n > 0) {
            let _ = writeln!(digest, "{:<40}{n:>10}", category.name());
        }
    }
    let text_path = dir.join(TEXT_FILE);
    write_file(&text_path, &digest)?;

    Ok(ReportFiles {
        summary: summary_path,
        per_class: per_class_path,
        categories: categories_path,
        text: text_path,
    })
}
