use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.n_train=20",
    "--set",
    "synth.n_test=10",
    "--set",
    "synth.length=30",
    "--set",
    "train.epochs=3",
];

fn rrll(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrll"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .env_remove("RRLL_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(out: &Path, args: &[&str]) {
    let o = rrll(out, args);
    assert_eq!(
        code(&o),
        0,
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Data rows of a `#`-commented TSV, header first.
fn rows(path: impl AsRef<Path>) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

#[test]
fn full_pipeline_writes_expected_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["generate"]);
    ok(out, &["train"]);
    ok(out, &["eval"]);
    let test = out.join("data/test.jsonl");
    ok(
        out,
        &[
            "correct",
            "--set",
            &format!("paths.input={}", test.display()),
        ],
    );

    for f in [
        "configs/generate.toml",
        "configs/train.toml",
        "data/train.jsonl",
        "data/manifest.json",
        "checkpoints/final.json",
        "reports/summary.tsv",
        "reports/per_class.tsv",
        "reports/trace.jsonl",
        "corrected/labels.jsonl",
        "corrected/summary.txt",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let stats = rows(out.join("stats/train.tsv"));
    assert_eq!(stats.len(), 1 + 3);

    let labels = read(out.join("corrected/labels.jsonl"));
    assert!(labels.starts_with("{\"alphabet\":[\"Wake\",\"N1\",\"N2\",\"N3\",\"REM\"]}"));
    assert_eq!(labels.lines().count(), 1 + 10 * 30);
}

#[test]
fn generate_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&a, &["generate", "--seed", "5"]);
    ok(&b, &["generate", "--seed", "5"]);
    ok(&c, &["generate", "--seed", "6"]);
    for f in ["data/train.jsonl", "data/test.jsonl", "data/manifest.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_ne!(
        read(a.join("data/train.jsonl")),
        read(c.join("data/train.jsonl"))
    );
}

#[test]
fn manifest_accuracy_tracks_predictor_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["generate", "--set", "synth.predictor_error=0.3"],
    );
    let m: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("data/manifest.json"))).unwrap();
    let n = m["train"]["instances"].as_f64().unwrap();
    assert_eq!(n, 600.0);
    let acc = m["train"]["predictor_accuracy"].as_f64().unwrap();
    let sd = (0.3f64 * 0.7 / n).sqrt();
    assert!((acc - 0.7).abs() <= 3.0 * sd, "accuracy {acc}");
}

#[test]
fn seizure_profile_uses_three_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--set", "profile=seizure"]);
    let data = read(dir.path().join("data/train.jsonl"));
    let header: serde_json::Value = serde_json::from_str(data.lines().next().unwrap()).unwrap();
    let alphabet: Vec<&str> = header["alphabet"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(alphabet, ["Normal", "Preictal", "Ictal"]);
}

#[test]
fn untrained_checkpoint_is_rejected_against_wrong_alphabet() {
    let dir = tempfile::tempdir().unwrap();
    let sleep = dir.path().join("sleep");
    let seizure = dir.path().join("seizure");
    ok(&sleep, &["generate"]);
    ok(&sleep, &["train", "--set", "train.epochs=0"]);
    ok(&seizure, &["generate", "--set", "profile=seizure"]);
    let ckpt = sleep.join("checkpoints/final.json");
    let o = rrll(
        &seizure,
        &[
            "eval",
            "--set",
            "profile=seizure",
            "--set",
            &format!("paths.checkpoint={}", ckpt.display()),
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn correct_without_truth_reports_violations_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["generate"]);
    ok(out, &["train"]);
    let unlabeled = out.join("unlabeled.jsonl");
    let stripped: String = read(out.join("data/test.jsonl"))
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(obj) = v.as_object_mut() {
                obj.remove("true");
            }
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(&unlabeled, stripped).unwrap();
    ok(
        out,
        &[
            "correct",
            "--set",
            &format!("paths.input={}", unlabeled.display()),
        ],
    );
    assert!(out.join("corrected/labels.jsonl").is_file());
    let summary = read(out.join("corrected/summary.txt"));
    assert!(summary.contains("violation"), "{summary}");
    assert!(!summary.contains("accuracy"), "{summary}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let usage = [
        vec!["train", "--set", "train.bogus=1"],
        vec!["train", "--set", "train.lr=-1"],
        vec!["train", "--set", "train.seed=2"],
        vec!["generate", "--config", "/nonexistent/run.toml"],
        vec!["generate", "--rules", "/nonexistent/rules.txt"],
        vec!["correct"],
        vec!["frobnicate"],
    ];
    for args in &usage {
        assert_eq!(code(&rrll(out, args)), 2, "{args:?}");
    }
    // Nothing generated yet.
    assert_eq!(code(&rrll(out, &["train"])), 3);
    assert_eq!(code(&rrll(out, &["eval"])), 3);
    ok(out, &["generate"]);
    std::fs::write(out.join("broken.jsonl"), "{not json\n").unwrap();
    let broken = format!("paths.train={}", out.join("broken.jsonl").display());
    assert_eq!(code(&rrll(out, &["train", "--set", &broken])), 3);

    let o = rrll(out, &["train", "--set", "train.lr=1e300"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seq"));
}

#[test]
fn out_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("env-root");
    let o = Command::new(env!("CARGO_BIN_EXE_rrll"))
        .arg("generate")
        .args(SMALL)
        .env("RRLL_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(root.join("data/train.jsonl").is_file());
    let echo = read(root.join("configs/generate.toml"));
    assert!(echo.contains("n_train = 20"));
}

#[test]
fn rules_file_replaces_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let rules = out.join("rules.txt");
    std::fs::write(&rules, "labels: Up, Down, Flat\nUp !> Down\n").unwrap();
    ok(out, &["generate", "--rules", rules.to_str().unwrap()]);
    let m: serde_json::Value = serde_json::from_str(&read(out.join("data/manifest.json"))).unwrap();
    assert_eq!(m["alphabet"], serde_json::json!(["Up", "Down", "Flat"]));

    std::fs::write(&rules, "labels: Up, Down\nUp !> Sideways\n").unwrap();
    let o = rrll(out, &["generate", "--rules", rules.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("line 2"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn sweep_records_every_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["generate"]);
    let grid = [
        "--set",
        "sweep.lrs=[3e-4, 1e300]",
        "--set",
        "sweep.alphas=[1.0, 0.1]",
        "--set",
        "sweep.temperatures=[1.0]",
        "--set",
        "sweep.epsilons=[0.1]",
        "--set",
        "sweep.seeds=2",
        "--set",
        "train.epochs=2",
        "--set",
        "jobs=3",
    ];
    let mut args = vec!["sweep"];
    args.extend(grid);
    ok(out, &args);
    let table = rows(out.join("sweep/manifest.tsv"));
    let header = &table[0];
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let body = &table[1..];
    assert_eq!(body.len(), 4 * 2);
    let order: Vec<(String, String)> = body
        .iter()
        .map(|r| (r[col("cell")].clone(), r[col("seed")].clone()))
        .collect();
    let expected: Vec<(String, String)> = (0..4)
        .flat_map(|c| (0..2).map(move |s| (c.to_string(), s.to_string())))
        .collect();
    assert_eq!(order, expected);
    for r in body {
        let diverges = r[col("lr")] == "1e300";
        assert_eq!(r[col("status")] != "ok", diverges, "{r:?}");
        if !diverges {
            assert!(out
                .join("sweep")
                .join(&r[col("dir")])
                .join("stats.tsv")
                .is_file());
        }
    }

    // Rerunning with a different worker count gives the same manifest.
    let first = read(out.join("sweep/manifest.tsv"));
    let last = args.len() - 1;
    args[last] = "jobs=1";
    ok(out, &args);
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("# config_hash"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first), strip(&read(out.join("sweep/manifest.tsv"))));
}
