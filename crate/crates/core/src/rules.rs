//! Label alphabets and transition-impossibility rules.
//!
//! A [`RuleSet`] stores the pairs `(from, to)` that can never occur as
//! consecutive labels. The one-step reachable set of a label is the
//! complement of its impossibility list, and always contains the label
//! itself: a stage may persist indefinitely.
//!
//! Rules files are plain text:
//!
//! ```text
//! # comment
//! labels: Wake, N1, N2, N3, REM
//! Wake !> N3, REM
//! N2 !> Wake
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, uniquely named class labels. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelAlphabet {
    names: Vec<String>,
}

impl LabelAlphabet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::domain(format!(
                "an alphabet needs at least 2 labels, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.trim() != name {
                return Err(Error::domain(format!(
                    "label {i} has an empty or padded name {name:?}"
                )));
            }
            if name.contains(',') || name.contains('#') || name.contains("!>") {
                return Err(Error::domain(format!(
                    "label name {name:?} contains a reserved character"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::domain(format!("duplicate label name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Number of labels, `K`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: usize) -> Result<&str> {
        self.names.get(label).map(String::as_str).ok_or_else(|| {
            Error::domain(format!(
                "label index {label} out of range for K={}",
                self.len()
            ))
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check(&self, label: usize) -> Result<()> {
        if label < self.len() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "label index {label} out of range for K={}",
                self.len()
            )))
        }
    }
}

impl TryFrom<Vec<String>> for LabelAlphabet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelAlphabet::new(names)
    }
}

impl From<LabelAlphabet> for Vec<String> {
    fn from(alphabet: LabelAlphabet) -> Self {
        alphabet.names
    }
}

/// The built-in rule sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    /// Wake, N1, N2, N3, REM.
    Sleep,
    /// Normal, Preictal, Ictal.
    Seizure,
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sleep" => Ok(Builtin::Sleep),
            "seizure" => Ok(Builtin::Seizure),
            other => Err(Error::domain(format!(
                "unknown builtin rule set {other:?} (expected sleep or seizure)"
            ))),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Builtin::Sleep => "sleep",
            Builtin::Seizure => "seizure",
        })
    }
}

/// An immutable impossibility relation over a [`LabelAlphabet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSet {
    alphabet: LabelAlphabet,
    // Row-major K x K; `true` marks an impossible transition.
    impossible: Vec<bool>,
}

impl RuleSet {
    /// Builds a rule set from impossible `(from, to)` pairs. Duplicates collapse.
    pub fn new(
        alphabet: LabelAlphabet,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let k = alphabet.len();
        let mut impossible = vec![false; k * k];
        for (from, to) in pairs {
            alphabet.check(from)?;
            alphabet.check(to)?;
            if from == to {
                return Err(Error::domain(format!(
                    "self-transition {} -> {} cannot be impossible",
                    alphabet.names[from], alphabet.names[to]
                )));
            }
            impossible[from * k + to] = true;
        }
        Ok(Self {
            alphabet,
            impossible,
        })
    }

    pub fn builtin(which: Builtin) -> Self {
        let (names, pairs): (&[&str], &[(usize, usize)]) = match which {
            // Wake !> N3, REM; N1 !> N3, REM; N2 !> Wake; N3 !> N1; REM !> N1, N3
            Builtin::Sleep => (
                &["Wake", "N1", "N2", "N3", "REM"],
                &[
                    (0, 3),
                    (0, 4),
                    (1, 3),
                    (1, 4),
                    (2, 0),
                    (3, 1),
                    (4, 1),
                    (4, 3),
                ],
            ),
            // Normal !> Ictal; Preictal !> Normal; Ictal !> Normal, Preictal
            Builtin::Seizure => (
                &["Normal", "Preictal", "Ictal"],
                &[(0, 2), (1, 0), (2, 0), (2, 1)],
            ),
        };
        let alphabet =
            LabelAlphabet::new(names.iter().copied()).expect("builtin alphabet is valid");
        RuleSet::new(alphabet, pairs.iter().copied()).expect("builtin rules are valid")
    }

    pub fn alphabet(&self) -> &LabelAlphabet {
        &self.alphabet
    }

    /// Number of labels, `K`.
    pub fn num_labels(&self) -> usize {
        self.alphabet.len()
    }

    /// Whether `to` is one-step reachable from `from`.
    pub fn is_reachable(&self, from: usize, to: usize) -> Result<bool> {
        self.alphabet.check(from)?;
        self.alphabet.check(to)?;
        Ok(self.reachable_unchecked(from, to))
    }

    #[inline]
    pub(crate) fn reachable_unchecked(&self, from: usize, to: usize) -> bool {
        !self.impossible[from * self.alphabet.len() + to]
    }

    /// All labels reachable from `from`, in index order. Always contains `from`.
    pub fn reachable(&self, from: usize) -> Result<Vec<usize>> {
        self.alphabet.check(from)?;
        Ok((0..self.num_labels())
            .filter(|&to| self.reachable_unchecked(from, to))
            .collect())
    }

    pub fn impossible_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.num_labels();
        (0..k * k)
            .filter(|&i| self.impossible[i])
            .map(|i| (i / k, i % k))
            .collect()
    }

    /// Parses the rules text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut alphabet: Option<LabelAlphabet> = None;
        let mut pairs = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::RuleParse {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }

            let Some(alpha) = alphabet.as_ref() else {
                let rest = line
                    .strip_prefix("labels:")
                    .ok_or_else(|| err(format!("expected `labels: ...` header, found {line:?}")))?;
                let names: Vec<&str> = rest.split(',').map(str::trim).collect();
                alphabet = Some(LabelAlphabet::new(names).map_err(|e| err(e.to_string()))?);
                continue;
            };

            let (from, targets) = line
                .split_once("!>")
                .ok_or_else(|| err(format!("expected `FROM !> TO, ...`, found {line:?}")))?;
            let lookup = |name: &str| {
                alpha
                    .index_of(name)
                    .ok_or_else(|| err(format!("unknown label {name:?}")))
            };
            let from = lookup(from.trim())?;
            let targets = targets.trim();
            if targets.is_empty() {
                return Err(err("empty target list".to_string()));
            }
            for name in targets.split(',').map(str::trim) {
                let to = lookup(name)?;
                if to == from {
                    return Err(err(format!(
                        "self-transition {name} !> {name} is not allowed"
                    )));
                }
                pairs.push((from, to));
            }
        }

        let alphabet = alphabet.ok_or(Error::RuleParse {
            line: text.lines().count().max(1),
            message: "missing `labels:` header".to_string(),
        })?;
        RuleSet::new(alphabet, pairs)
    }

    /// Emits the rules text format: the labels line, then one line per
    /// source label with a non-empty impossibility list, in index order.
    pub fn serialize(&self) -> String {
        let names = self.alphabet.names();
        let mut out = format!("labels: {}\n", names.join(", "));
        for from in 0..self.num_labels() {
            let targets: Vec<&str> = (0..self.num_labels())
                .filter(|&to| !self.reachable_unchecked(from, to))
                .map(|to| names[to].as_str())
                .collect();
            if !targets.is_empty() {
                out.push_str(&format!("{} !> {}\n", names[from], targets.join(", ")));
            }
        }
        out
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl FromStr for RuleSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleSet::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WAKE: usize = 0;
    const N1: usize = 1;
    const N2: usize = 2;
    const REM: usize = 4;

    const SLEEP_TEXT: &str = "\
# sleep staging
labels: Wake, N1, N2, N3, REM
Wake !> N3, REM
N1   !> N3, REM   # light sleep
N2   !> Wake
N3   !> N1
REM  !> N1, N3
";

    #[test]
    fn sleep_examples() {
        let rules = RuleSet::builtin(Builtin::Sleep);
        assert!(!rules.is_reachable(WAKE, REM).unwrap());
        assert!(rules.is_reachable(N2, N2).unwrap());
        assert!(rules.is_reachable(WAKE, N1).unwrap());
    }

    #[test]
    fn builtin_sizes() {
        let sleep = RuleSet::builtin(Builtin::Sleep);
        assert_eq!(sleep.num_labels(), 5);
        assert_eq!(sleep.impossible_pairs().len(), 8);
        let seizure = RuleSet::builtin(Builtin::Seizure);
        assert_eq!(seizure.num_labels(), 3);
        assert_eq!(seizure.impossible_pairs().len(), 4);
        assert!(seizure.is_reachable(2, 2).unwrap());
        assert_eq!(seizure.reachable(2).unwrap(), vec![2]);
    }

    #[test]
    fn sleep_has_17_reachable_pairs() {
        let rules = RuleSet::builtin(Builtin::Sleep);
        let total: usize = (0..5).map(|a| rules.reachable(a).unwrap().len()).sum();
        assert_eq!(total, 17);
    }

    #[test]
    fn self_transitions_always_reachable() {
        for which in [Builtin::Sleep, Builtin::Seizure] {
            let rules = RuleSet::builtin(which);
            for a in 0..rules.num_labels() {
                assert!(rules.is_reachable(a, a).unwrap());
            }
        }
    }

    #[test]
    fn invalid_index_is_domain_error() {
        let rules = RuleSet::builtin(Builtin::Sleep);
        assert!(matches!(rules.is_reachable(5, 0), Err(Error::Domain(_))));
        assert!(matches!(rules.is_reachable(0, 7), Err(Error::Domain(_))));
    }

    #[test]
    fn unknown_builtin_name() {
        assert!("sleep".parse::<Builtin>().is_ok());
        assert!(matches!(
            "cardiac".parse::<Builtin>(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn parse_matches_builtin() {
        assert_eq!(
            RuleSet::parse(SLEEP_TEXT).unwrap(),
            RuleSet::builtin(Builtin::Sleep)
        );
    }

    #[test]
    fn empty_body_means_everything_reachable() {
        let rules = RuleSet::parse("labels: A, B\n").unwrap();
        assert_eq!(rules.reachable(0).unwrap(), vec![0, 1]);
        assert!(rules.impossible_pairs().is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        let rules = RuleSet::parse("labels: A, B, C\nA !> B, B\nA !> B\n").unwrap();
        assert_eq!(rules.impossible_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("labels: A, B\nA !> A\n", 2),
            ("labels: A, B\n\nA !> C\n", 3),
            ("labels: A, B\nA -> B\n", 2),
            ("# nothing\nA !> B\n", 2),
            ("labels: A, A\n", 1),
            ("labels: A, B\nB !>\n", 2),
        ];
        for (text, want) in cases {
            match RuleSet::parse(text) {
                Err(Error::RuleParse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn serialize_format() {
        let text = RuleSet::builtin(Builtin::Seizure).serialize();
        assert_eq!(
            text,
            "labels: Normal, Preictal, Ictal\nNormal !> Ictal\nPreictal !> Normal\nIctal !> Normal, Preictal\n"
        );
    }

    #[test]
    fn builtin_fixpoint() {
        for which in [Builtin::Sleep, Builtin::Seizure] {
            let rules = RuleSet::builtin(which);
            let once = RuleSet::parse(&rules.serialize()).unwrap();
            assert_eq!(once, rules);
            assert_eq!(once.serialize(), rules.serialize());
        }
    }

    fn arb_rules() -> impl Strategy<Value = RuleSet> {
        (2usize..7).prop_flat_map(|k| {
            proptest::collection::vec(any::<bool>(), k * k).prop_map(move |mask| {
                let names: Vec<String> = (0..k).map(|i| format!("S{i}")).collect();
                let pairs = (0..k * k)
                    .filter(|&i| mask[i] && i / k != i % k)
                    .map(|i| (i / k, i % k));
                RuleSet::new(LabelAlphabet::new(names).unwrap(), pairs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip(rules in arb_rules()) {
            let back = RuleSet::parse(&rules.serialize()).unwrap();
            prop_assert_eq!(back.impossible_pairs(), rules.impossible_pairs());
        }

        #[test]
        fn complement_identity(rules in arb_rules()) {
            let pairs = rules.impossible_pairs();
            let k = rules.num_labels();
            for a in 0..k {
                prop_assert!(rules.is_reachable(a, a).unwrap());
                for b in 0..k {
                    prop_assert!(rules.is_reachable(a, b).unwrap() ^ pairs.contains(&(a, b)));
                }
            }
        }
    }
}
