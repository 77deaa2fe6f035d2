//! Trajectory data model and the line-delimited dataset format.
//!
//! A dataset file starts with one header object carrying the alphabet and
//! the feature dimension, followed by one object per instance:
//!
//! ```text
//! {"alphabet":["Wake","N1","N2","N3","REM"],"M":2}
//! {"seq_id":"s0","t":0,"features":[0.5,-1.25],"pred":1,"true":2}
//! {"seq_id":"s0","t":1,"features":[0.0,3.0],"pred":2,"true":2}
//! ```
//!
//! Records of one `seq_id` are contiguous and ordered by `t`. The `true`
//! field may be omitted, in which case it must be omitted everywhere.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::LabelAlphabet;

/// One time step as seen by the correction layer: the frozen predictor's
/// feature vector and label, plus the ground truth when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
    pub pred: usize,
    pub truth: Option<usize>,
}

/// An ordered run of instances from one subject or segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub seq_id: String,
    pub instances: Vec<Instance>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn preds(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.pred).collect()
    }

    /// Ground-truth labels, or `None` if any instance lacks one.
    pub fn truths(&self) -> Option<Vec<usize>> {
        self.instances.iter().map(|i| i.truth).collect()
    }
}

/// A validated collection of trajectories over one alphabet and feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub alphabet: LabelAlphabet,
    pub feature_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    alphabet: LabelAlphabet,
    #[serde(rename = "M")]
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    seq_id: String,
    t: usize,
    features: Vec<f64>,
    pred: usize,
    #[serde(rename = "true", default, skip_serializing_if = "Option::is_none")]
    truth: Option<usize>,
}

impl Dataset {
    pub fn new(
        alphabet: LabelAlphabet,
        feature_dim: usize,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        let k = alphabet.len();
        let mut with_truth = None;
        for traj in &trajectories {
            if traj.is_empty() {
                return Err(Error::domain(format!(
                    "trajectory {:?} is empty",
                    traj.seq_id
                )));
            }
            for (t, inst) in traj.instances.iter().enumerate() {
                let at = || format!("trajectory {:?} step {t}", traj.seq_id);
                if inst.features.len() != feature_dim {
                    return Err(Error::domain(format!(
                        "{}: feature length {} != M={feature_dim}",
                        at(),
                        inst.features.len()
                    )));
                }
                if inst.pred >= k || inst.truth.is_some_and(|y| y >= k) {
                    return Err(Error::domain(format!(
                        "{}: label out of range for K={k}",
                        at()
                    )));
                }
                if *with_truth.get_or_insert(inst.truth.is_some()) != inst.truth.is_some() {
                    return Err(Error::domain(format!(
                        "{}: true labels must be present everywhere or nowhere",
                        at()
                    )));
                }
            }
        }
        Ok(Self {
            alphabet,
            feature_dim,
            trajectories,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.alphabet.len()
    }

    pub fn has_truth(&self) -> bool {
        self.trajectories
            .first()
            .is_some_and(|t| t.instances[0].truth.is_some())
    }

    pub fn num_instances(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = Header {
            alphabet: self.alphabet.clone(),
            feature_dim: self.feature_dim,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for traj in &self.trajectories {
            for (t, inst) in traj.instances.iter().enumerate() {
                let rec = Record {
                    seq_id: traj.seq_id.clone(),
                    t,
                    features: inst.features.clone(),
                    pred: inst.pred,
                    truth: inst.truth,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let load_err = |record: usize, message: String| Error::Load { record, message };

        let header: Header = loop {
            let Some((i, line)) = lines.next() else {
                return Err(load_err(1, "missing header line".into()));
            };
            let line = line.map_err(|e| load_err(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            break serde_json::from_str(&line)
                .map_err(|e| load_err(i + 1, format!("bad header: {e}")))?;
        };
        let k = header.alphabet.len();
        let m = header.feature_dim;

        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut with_truth: Option<bool> = None;
        for (i, line) in lines {
            let rec_no = i + 1;
            let line = line.map_err(|e| load_err(rec_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| load_err(rec_no, e.to_string()))?;
            let name = format!("{:?} t={}", rec.seq_id, rec.t);
            if rec.features.len() != m {
                return Err(load_err(
                    rec_no,
                    format!("{name}: feature length {} != M={m}", rec.features.len()),
                ));
            }
            if rec.features.iter().any(|v| !v.is_finite()) {
                return Err(load_err(rec_no, format!("{name}: non-finite feature")));
            }
            if rec.pred >= k {
                return Err(load_err(
                    rec_no,
                    format!("{name}: pred label {} out of range for K={k}", rec.pred),
                ));
            }
            if let Some(y) = rec.truth.filter(|&y| y >= k) {
                return Err(load_err(
                    rec_no,
                    format!("{name}: true label {y} out of range for K={k}"),
                ));
            }
            if *with_truth.get_or_insert(rec.truth.is_some()) != rec.truth.is_some() {
                return Err(load_err(
                    rec_no,
                    format!("{name}: `true` must be present on all records or none"),
                ));
            }

            let continues = trajectories
                .last()
                .is_some_and(|tr| tr.seq_id == rec.seq_id);
            if !continues {
                if trajectories.iter().any(|tr| tr.seq_id == rec.seq_id) {
                    return Err(load_err(
                        rec_no,
                        format!("{name}: records for this seq_id are not contiguous"),
                    ));
                }
                trajectories.push(Trajectory {
                    seq_id: rec.seq_id.clone(),
                    instances: Vec::new(),
                });
            }
            let traj = trajectories.last_mut().expect("pushed above");
            if rec.t != traj.instances.len() {
                return Err(load_err(
                    rec_no,
                    format!("{name}: expected t={}", traj.instances.len()),
                ));
            }
            traj.instances.push(Instance {
                features: rec.features,
                pred: rec.pred,
                truth: rec.truth,
            });
        }

        Ok(Dataset {
            alphabet: header.alphabet,
            feature_dim: m,
            trajectories,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::read_from(BufReader::new(file))
    }

    /// Splits every trajectory into consecutive pieces of at most `max_len` steps.
    pub fn segmented(&self, max_len: usize) -> Result<Dataset> {
        Ok(Dataset {
            alphabet: self.alphabet.clone(),
            feature_dim: self.feature_dim,
            trajectories: segment(&self.trajectories, max_len)?,
        })
    }
}

/// Splits trajectories into consecutive pieces of at most `max_len` steps.
///
/// Concatenating the output in order reproduces the input. Pieces of a split
/// trajectory are named `<seq_id>/<piece>`; unsplit trajectories keep their id.
pub fn segment(trajectories: &[Trajectory], max_len: usize) -> Result<Vec<Trajectory>> {
    if max_len < 2 {
        return Err(Error::domain(format!(
            "segment length must be at least 2, got {max_len}"
        )));
    }
    let mut out = Vec::new();
    for traj in trajectories {
        if traj.len() <= max_len {
            out.push(traj.clone());
            continue;
        }
        for (piece, chunk) in traj.instances.chunks(max_len).enumerate() {
            out.push(Trajectory {
                seq_id: format!("{}/{piece}", traj.seq_id),
                instances: chunk.to_vec(),
            });
        }
    }
    Ok(out)
}
