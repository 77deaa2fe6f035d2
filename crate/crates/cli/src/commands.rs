//! The five subcommands and the output layout they share:
//!
//! ```text
//! <out>/configs/<command>.toml     resolved config echo
//! <out>/data/{train,test}.jsonl    generated datasets
//! <out>/data/manifest.json         generation summary
//! <out>/stats/train.tsv            per-epoch training stats
//! <out>/checkpoints/final.json     trained agent
//! <out>/reports/                   eval tables, summary.txt, trace.jsonl
//! <out>/corrected/                 labels.jsonl plus its report tables
//! <out>/sweep/manifest.tsv         one row per cell and seed
//! <out>/sweep/cells/cNNN/sK/       stats.tsv and report tables per run
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rrll::data::Dataset;
use rrll::env::{write_trace, RewardSpec};
use rrll::metrics::violation_rate;
use rrll::report::{evaluate, write_report, write_stats, EvalReport, ReportMeta};
use rrll::rules::RuleSet;
use rrll::synth::generate as synthesize;
use rrll::train::{sweep_cells, train as fit, Checkpoint, SweepCell};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub rules: RuleSet,
    pub hash: String,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

impl Context {
    /// Loads the rules and echoes the resolved config for `command`.
    pub fn new(cfg: RunConfig, command: &str) -> Result<Self, CliError> {
        let rules = cfg.load_rules()?;
        let dir = cfg.out.join("configs");
        create_dir(&dir)?;
        let path = dir.join(format!("{command}.toml"));
        fs::write(&path, cfg.to_toml()).map_err(|e| io_err(&path, e))?;
        let hash = cfg.hash();
        Ok(Self { cfg, rules, hash })
    }

    fn out(&self, sub: &str) -> PathBuf {
        self.cfg.out.join(sub)
    }

    fn meta(&self, seed: u64) -> ReportMeta {
        let mut meta = ReportMeta::new(&self.hash, seed);
        meta.push("profile", self.cfg.profile.to_string());
        meta
    }

    fn input(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out(default))
    }

    fn load(&self, path: &Path) -> Result<Dataset, CliError> {
        Dataset::load(path).map_err(|e| match e {
            rrll::Error::Io { .. } => {
                CliError::Data(format!("{e} (run `rrll generate` or set the dataset path)"))
            }
            other => other.into(),
        })
    }

    /// Loads the input dataset and checks it against the checkpoint.
    fn compatible(&self, ckpt: &Checkpoint, path: &Path) -> Result<Dataset, CliError> {
        let data = self.load(path)?;
        ckpt.check_compatible(&data)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(data)
    }

    fn checkpoint(&self) -> Result<Checkpoint, CliError> {
        let path = self.input(&self.cfg.paths.checkpoint, "checkpoints/final.json");
        Ok(Checkpoint::load(&path)?)
    }
}

#[derive(Serialize)]
struct SplitSummary {
    trajectories: usize,
    instances: usize,
    predictor_accuracy: f64,
    predictor_violation_rate: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    seed: u64,
    profile: String,
    alphabet: &'a [String],
    feature_dim: usize,
    length: usize,
    train: SplitSummary,
    test: SplitSummary,
}

fn split_summary(data: &Dataset, rules: &RuleSet) -> Result<SplitSummary, CliError> {
    let (mut right, mut total) = (0usize, 0usize);
    let mut preds = Vec::with_capacity(data.trajectories.len());
    for traj in &data.trajectories {
        for inst in &traj.instances {
            total += 1;
            right += usize::from(inst.truth == Some(inst.pred));
        }
        preds.push(traj.preds());
    }
    let violations = if preds.is_empty() {
        0.0
    } else {
        violation_rate(&preds, rules)?.rate()
    };
    Ok(SplitSummary {
        trajectories: data.trajectories.len(),
        instances: total,
        predictor_accuracy: if total == 0 {
            0.0
        } else {
            right as f64 / total as f64
        },
        predictor_violation_rate: violations,
    })
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let data = synthesize(&cfg.synth, &ctx.rules)?;
    let dir = ctx.out("data");
    create_dir(&dir)?;
    data.train.save(dir.join("train.jsonl"))?;
    data.test.save(dir.join("test.jsonl"))?;
    let manifest = Manifest {
        config_hash: &ctx.hash,
        seed: cfg.seed,
        profile: cfg.profile.to_string(),
        alphabet: ctx.rules.alphabet().names(),
        feature_dim: cfg.synth.feature_dim,
        length: cfg.synth.length,
        train: split_summary(&data.train, &ctx.rules)?,
        test: split_summary(&data.test, &ctx.rules)?,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    println!(
        "generated {} train / {} test trajectories in {} (predictor accuracy {:.4}, violation rate {:.4})",
        manifest.train.trajectories,
        manifest.test.trajectories,
        dir.display(),
        manifest.train.predictor_accuracy,
        manifest.train.predictor_violation_rate
    );
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let data = ctx.load(&ctx.input(&cfg.paths.train, "data/train.jsonl"))?;
    let outcome = fit(&data, &ctx.rules, &cfg.train)?;

    let stats_dir = ctx.out("stats");
    create_dir(&stats_dir)?;
    write_stats(
        stats_dir.join("train.tsv"),
        &ctx.meta(cfg.seed),
        &outcome.stats,
    )?;
    let ckpt_dir = ctx.out("checkpoints");
    create_dir(&ckpt_dir)?;
    let ckpt = Checkpoint::new(
        data.alphabet.clone(),
        data.feature_dim,
        cfg.train.reward,
        outcome.stats.len(),
        outcome.agent,
    );
    ckpt.save(ckpt_dir.join("final.json"))?;
    if let (Some(first), Some(last)) = (outcome.stats.first(), outcome.stats.last()) {
        println!(
            "trained {} epochs: mean return {:.2} -> {:.2}, accuracy {:.4} -> {:.4}",
            outcome.stats.len(),
            first.mean_return,
            last.mean_return,
            first.accuracy,
            last.accuracy
        );
    }
    Ok(())
}

fn print_summary(report: &EvalReport) {
    let c = &report.corrected;
    let p = &report.predictor;
    match (&p.classification, &c.classification) {
        (Some(pc), Some(cc)) => println!(
            "accuracy {:.4} -> {:.4}, violation rate {:.4} -> {:.4}",
            pc.accuracy,
            cc.accuracy,
            p.violations.rate(),
            c.violations.rate()
        ),
        _ => println!(
            "violation rate {:.4} -> {:.4}",
            p.violations.rate(),
            c.violations.rate()
        ),
    }
}

pub fn eval(ctx: &Context) -> Result<(), CliError> {
    let ckpt = ctx.checkpoint()?;
    let data = ctx.compatible(&ckpt, &ctx.input(&ctx.cfg.paths.test, "data/test.jsonl"))?;
    let spec = RewardSpec::new(ckpt.reward, ctx.rules.clone());
    let ev = evaluate(&ckpt.agent, &data, &spec)?;
    let dir = ctx.out("reports");
    write_report(&dir, &ctx.meta(ctx.cfg.seed), &ev.report)?;
    if !ev.episodes.is_empty() {
        let path = dir.join("trace.jsonl");
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_trace(&ev.episodes, BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
    }
    print_summary(&ev.report);
    Ok(())
}

#[derive(Serialize)]
struct LabelHeader<'a> {
    alphabet: &'a [String],
}

#[derive(Serialize)]
struct LabelRecord<'a> {
    seq_id: &'a str,
    t: usize,
    pred: usize,
    corrected: usize,
}

pub fn correct(ctx: &Context) -> Result<(), CliError> {
    let input = ctx.cfg.paths.input.clone().ok_or_else(|| {
        CliError::Usage("correct needs an input dataset: --set paths.input=PATH".into())
    })?;
    let ckpt = ctx.checkpoint()?;
    let data = ctx.compatible(&ckpt, &input)?;
    let spec = RewardSpec::new(ckpt.reward, ctx.rules.clone());
    let ev = evaluate(&ckpt.agent, &data, &spec)?;

    let dir = ctx.out("corrected");
    create_dir(&dir)?;
    let path = dir.join("labels.jsonl");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        serde_json::to_writer(
            &mut *out,
            &LabelHeader {
                alphabet: data.alphabet.names(),
            },
        )?;
        out.write_all(b"\n")?;
        for (traj, labels) in data.trajectories.iter().zip(&ev.corrected) {
            for (t, (inst, &a)) in traj.instances.iter().zip(labels).enumerate() {
                let rec = LabelRecord {
                    seq_id: &traj.seq_id,
                    t,
                    pred: inst.pred,
                    corrected: a,
                };
                serde_json::to_writer(&mut *out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| io_err(&path, e))?;
    write_report(&dir, &ctx.meta(ctx.cfg.seed), &ev.report)?;
    print_summary(&ev.report);
    Ok(())
}

/// One manifest row.
struct SweepRow {
    cell: SweepCell,
    status: String,
    final_return: Option<f64>,
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    test_violation_rate: Option<f64>,
    predictor_violation_rate: Option<f64>,
    dir: String,
}

fn run_cell(
    ctx: &Context,
    cell: &SweepCell,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<SweepRow, CliError> {
    let rel = format!("cells/c{:03}/s{}", cell.cell, cell.seed);
    let dir = ctx.out("sweep").join(&rel);
    let mut row = SweepRow {
        cell: cell.clone(),
        status: "ok".into(),
        final_return: None,
        train_accuracy: None,
        test_accuracy: None,
        test_violation_rate: None,
        predictor_violation_rate: None,
        dir: rel,
    };
    let outcome = match fit(train_set, &ctx.rules, &cell.config) {
        Ok(o) => o,
        Err(rrll::Error::Numerical { seq_id, message }) => {
            row.status = format!("numerical_abort({seq_id}: {message})");
            return Ok(row);
        }
        Err(e) => return Err(e.into()),
    };
    create_dir(&dir)?;
    let meta = ctx.meta(cell.seed);
    write_stats(dir.join("stats.tsv"), &meta, &outcome.stats)?;
    let ev = evaluate(
        &outcome.agent,
        test_set,
        &RewardSpec::new(cell.config.reward, ctx.rules.clone()),
    )?;
    write_report(&dir, &meta, &ev.report)?;
    let last = outcome.stats.last().expect("at least one epoch");
    row.final_return = Some(last.mean_return);
    row.train_accuracy = Some(last.accuracy);
    row.test_accuracy = ev
        .report
        .corrected
        .classification
        .as_ref()
        .map(|c| c.accuracy);
    row.test_violation_rate = Some(ev.report.corrected.violations.rate());
    row.predictor_violation_rate = Some(ev.report.predictor.violations.rate());
    Ok(row)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_else(|| "NA".into())
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let train_set = ctx.load(&ctx.input(&cfg.paths.train, "data/train.jsonl"))?;
    let test_set = ctx.load(&ctx.input(&cfg.paths.test, "data/test.jsonl"))?;
    let cells = sweep_cells(&cfg.train, &cfg.sweep);
    let slots: Vec<Mutex<Option<Result<SweepRow, CliError>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.jobs.min(cells.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let result = run_cell(ctx, cell, &train_set, &test_set);
                let failed = result.is_err();
                *slots[i].lock().expect("no poisoned slot") = Some(result);
                if failed {
                    // Let the other workers drain quickly.
                    next.store(cells.len(), Ordering::Relaxed);
                }
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for slot in slots {
        match slot.into_inner().expect("no poisoned slot") {
            Some(Ok(row)) => rows.push(row),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }

    let mut text = String::new();
    for (k, v) in &ctx.meta(cfg.seed).entries {
        let _ = writeln!(text, "# {k}: {v}");
    }
    text.push_str(
        "cell\tseed\tlr\talpha\ttemperature\tepsilon\tstatus\tfinal_return\ttrain_accuracy\t\
         test_accuracy\ttest_violation_rate\tpredictor_violation_rate\tdir\n",
    );
    for r in &rows {
        let c = &r.cell.config;
        let _ = writeln!(
            text,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.cell.cell,
            r.cell.seed,
            c.lr,
            c.alpha,
            c.temperature,
            c.epsilon,
            r.status,
            opt(r.final_return),
            opt(r.train_accuracy),
            opt(r.test_accuracy),
            opt(r.test_violation_rate),
            opt(r.predictor_violation_rate),
            r.dir
        );
    }
    let dir = ctx.out("sweep");
    create_dir(&dir)?;
    let path = dir.join("manifest.tsv");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    let aborted = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "swept {} runs over {} cells ({aborted} numerical aborts); manifest at {}",
        rows.len(),
        rows.iter().map(|r| r.cell.cell).max().map_or(0, |c| c + 1),
        path.display()
    );
    Ok(())
}
