//! Run configuration: built-in defaults for a profile, overlaid by a TOML
//! file, then by `--set key=value` overrides, then by the dedicated flags.

use std::path::{Path, PathBuf};

use rrll::rules::{Builtin, RuleSet};
use rrll::synth::SynthConfig;
use rrll::train::{SweepGrid, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::CliError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "RRLL_OUT";
pub const DEFAULT_OUT: &str = "runs";

/// Input and output locations. Unset inputs default to the matching file
/// under the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Dataset to relabel with `correct`.
    pub input: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin domain; picks the default rules and harness settings.
    pub profile: Builtin,
    /// Seeds both data generation and training.
    pub seed: u64,
    /// Rules file replacing the profile's builtin rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    pub out: PathBuf,
    /// Sweep worker threads.
    pub jobs: usize,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
}

impl RunConfig {
    pub fn defaults(profile: Builtin, out: PathBuf) -> Self {
        Self {
            profile,
            seed: 0,
            rules: None,
            out,
            jobs: 1,
            paths: Paths::default(),
            synth: SynthConfig::profile(profile),
            train: TrainConfig::profile(profile),
            sweep: SweepGrid::default(),
        }
    }

    /// The echo omits the per-section seeds, which always mirror `seed`, so
    /// it can be fed back as `--config`.
    pub fn to_toml(&self) -> String {
        let mut table = Table::try_from(self).expect("run config serializes");
        for section in ["synth", "train"] {
            if let Some(Value::Table(t)) = table.get_mut(section) {
                t.remove("seed");
            }
        }
        toml::to_string(&table).expect("run config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the echoed config, leaving out
    /// `out` so the same run hashes the same wherever it is written.
    pub fn hash(&self) -> String {
        let located = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        Sha256::digest(located.to_toml().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn load_rules(&self) -> Result<RuleSet, CliError> {
        match &self.rules {
            None => Ok(RuleSet::builtin(self.profile)),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Usage(format!("cannot read rules file {}: {e}", path.display()))
                })?;
                RuleSet::parse(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, e: rrll::Error| CliError::Usage(format!("{name}: {e}"));
        self.synth.validate().map_err(|e| field("synth", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        if self.jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        let grid = &self.sweep;
        for (name, values) in [
            ("sweep.lrs", &grid.lrs),
            ("sweep.alphas", &grid.alphas),
            ("sweep.temperatures", &grid.temperatures),
            ("sweep.epsilons", &grid.epsilons),
        ] {
            if values.is_empty() {
                return Err(CliError::Usage(format!("{name} must not be empty")));
            }
        }
        if grid.seeds == 0 {
            return Err(CliError::Usage("sweep.seeds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything the command line can say about the configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub rules: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sets: Vec<String>,
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// plain string so `--set profile=seizure` works unquoted.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn apply_set(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("invalid key {key:?} in --set")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("{key}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_config(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Resolves the final configuration. `env_out` is the value of [`OUT_ENV`].
pub fn resolve(o: &Overrides, env_out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut user = match &o.config {
        Some(path) => read_config(path)?,
        None => Table::new(),
    };
    for set in &o.sets {
        apply_set(&mut user, set)?;
    }
    for section in ["synth", "train"] {
        if user
            .get(section)
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key("seed"))
        {
            return Err(CliError::Usage(format!(
                "{section}.seed: use the top-level seed"
            )));
        }
    }

    let profile = match user.get("profile") {
        None => Builtin::Sleep,
        Some(Value::String(s)) => s
            .parse()
            .map_err(|e| CliError::Usage(format!("profile: {e}")))?,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "profile: expected a string, got {other}"
            )))
        }
    };
    let default_out = env_out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut table =
        Table::try_from(RunConfig::defaults(profile, default_out)).expect("defaults serialize");
    merge(&mut table, user);
    let mut cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;

    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(rules) = &o.rules {
        cfg.rules = Some(rules.clone());
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}
