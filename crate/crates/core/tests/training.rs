use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrll::env::{run_episode, RewardSpec, RewardVariant};
use rrll::nn::{sample_action, softmax, PolicyInit};
use rrll::report::evaluate;
use rrll::rules::{Builtin, RuleSet};
use rrll::synth::{generate, SynthConfig};
use rrll::train::{train, train_epoch, Agent, Checkpoint, TrainConfig};

const DRAWS: usize = 100_000;

fn frequencies(probs: &[f64], epsilon: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..DRAWS {
        counts[sample_action(probs, epsilon, &mut rng)] += 1;
    }
    counts.into_iter().map(|c| c as f64).collect()
}

fn within_3_sigma(counts: &[f64], expected: &[f64]) {
    let n = DRAWS as f64;
    for (c, p) in counts.iter().zip(expected) {
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((c - n * p).abs() <= 3.0 * sigma, "count {c} vs {}", n * p);
    }
}

#[test]
fn full_exploration_is_uniform() {
    let probs = softmax(&[4.0, -1.0, 0.5, 9.0, 0.0], 1.0);
    within_3_sigma(&frequencies(&probs, 1.0, 1), &[0.2; 5]);
}

#[test]
fn half_exploration_is_a_mixture() {
    let probs = softmax(&[1.5, -0.5, 0.0, 2.0], 0.7);
    let expected: Vec<f64> = probs.iter().map(|p| 0.5 * p + 0.5 / 4.0).collect();
    within_3_sigma(&frequencies(&probs, 0.5, 2), &expected);
}

#[test]
fn no_exploration_follows_the_policy() {
    let probs = softmax(&[0.3, 0.1, -0.2], 1.0);
    within_3_sigma(&frequencies(&probs, 0.0, 3), &probs);
}

fn sleep_data(
    predictor_error: f64,
    n_train: usize,
    length: usize,
    seed: u64,
) -> (SynthConfig, rrll::synth::SynthData) {
    let cfg = SynthConfig {
        feature_dim: 8,
        length,
        n_train,
        n_test: 10,
        predictor_error,
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&cfg, &RuleSet::builtin(Builtin::Sleep)).unwrap();
    (cfg, data)
}

// With epsilon = 1 every action is uniform, so one epoch's returns must look
// like those of a selector that ignores the policy entirely.
#[test]
fn full_exploration_matches_random_selector() {
    let rules = RuleSet::builtin(Builtin::Sleep);
    let (_, data) = sleep_data(0.2, 100, 30, 4);
    let cfg = TrainConfig {
        epsilon: 1.0,
        alpha: 0.0,
        ..TrainConfig::default()
    };
    let mut agent = Agent::new(5, 8, 1.0, PolicyInit::Random, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stats = train_epoch(&data.train, &mut agent, &cfg, 0, &rules, &mut rng).unwrap();

    let spec = RewardSpec::new(RewardVariant::Full, rules);
    let mut mc = ChaCha8Rng::seed_from_u64(6);
    let runs = 200;
    let mut epoch_means = Vec::with_capacity(runs);
    let mut singles = Vec::new();
    for _ in 0..runs {
        let mut total = 0.0;
        for traj in &data.train.trajectories {
            let ep = run_episode(traj, |_| Ok(mc.random_range(0..5)), &spec).unwrap();
            total += ep.total_return() as f64;
            singles.push(ep.total_return() as f64);
        }
        epoch_means.push(total / data.train.trajectories.len() as f64);
    }
    let mean = epoch_means.iter().sum::<f64>() / runs as f64;
    let var = epoch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let sigma = var.sqrt();
    assert!(
        (stats.mean_return - mean).abs() <= 3.0 * sigma,
        "epoch mean {} vs random {mean} +- {sigma}",
        stats.mean_return
    );
    assert!((stats.accuracy - 0.2).abs() < 3.0 * (0.2 * 0.8 / 3000f64).sqrt());
}

#[test]
fn perfect_predictor_stays_near_zero() {
    let rules = RuleSet::builtin(Builtin::Sleep);
    let (cfg, data) = sleep_data(0.0, 40, 50, 7);
    let tc = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let out = train(&data.train, &rules, &tc).unwrap();
    let bound = -(tc.epsilon * cfg.length as f64 * 4.0);
    for s in &out.stats {
        assert!(
            s.mean_return >= bound,
            "epoch {} return {}",
            s.epoch,
            s.mean_return
        );
    }
    let ev = evaluate(&out.agent, &data.test, &RewardSpec::new(tc.reward, rules)).unwrap();
    assert_eq!(ev.report.corrected.mean_return, Some(0.0));
}

#[test]
fn literal_score_and_random_init_still_train() {
    let rules = RuleSet::builtin(Builtin::Sleep);
    let (_, data) = sleep_data(0.2, 10, 20, 8);
    let tc = TrainConfig {
        epochs: 2,
        score: rrll::nn::Score::Softmax,
        init: PolicyInit::Random,
        ..TrainConfig::default()
    };
    let out = train(&data.train, &rules, &tc).unwrap();
    assert_eq!(out.stats.len(), 2);
    assert!(out.stats.iter().all(|s| s.mean_return.is_finite()));
}

#[test]
fn checkpoint_reload_reproduces_evaluation() {
    let rules = RuleSet::builtin(Builtin::Sleep);
    let (_, data) = sleep_data(0.2, 10, 20, 9);
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.jsonl");
    let test_path = dir.path().join("test.jsonl");
    data.train.save(&train_path).unwrap();
    data.test.save(&test_path).unwrap();
    let train_set = rrll::data::Dataset::load(&train_path).unwrap();
    let test_set = rrll::data::Dataset::load(&test_path).unwrap();
    assert_eq!(train_set, data.train);
    assert_eq!(test_set, data.test);

    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(&train_set, &rules, &tc).unwrap();
    let ckpt = Checkpoint::new(
        train_set.alphabet.clone(),
        8,
        tc.reward,
        2,
        out.agent.clone(),
    );
    let path = dir.path().join("agent.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    back.check_compatible(&test_set).unwrap();
    let spec = RewardSpec::new(tc.reward, rules);
    let a = evaluate(&out.agent, &test_set, &spec).unwrap();
    let b = evaluate(&back.agent, &test_set, &spec).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.corrected, b.corrected);
}
