mod common;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mirrored_mpo::env::TaskParams;
use mirrored_mpo::harness::experiment::{metrics_file_name, run_experiment, train_run, train_to_file, SUMMARY_FILE};
use mirrored_mpo::harness::gap::pointwise_gap;
use mirrored_mpo::harness::{read_metrics, run_actor_steps, ActorState, ExperimentConfig};
use mirrored_mpo::nets::{GaussianHead, MlpParams};
use mirrored_mpo::replay::ReplayBuffer;
use mirrored_mpo::symmetry::build_quadruped_mirror_spec;
use mirrored_mpo::{ACT_DIM, OBS_DIM};

/// Small but complete configuration that trains in well under a second per run.
fn quick_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        batch_size: 16,
        n_action_samples: 4,
        hidden: vec![8],
        learner_steps: 120,
        metrics_every: 20,
        gap_states: 50,
        seeds: vec![1, 2],
        jobs: 1,
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// Policy with mean exactly 0 and stddev at the floor, i.e. the zero action up to 1e-6 noise.
fn zero_action_policy() -> MlpParams {
    let mut p = MlpParams::zeros(&[OBS_DIM, 4, 2 * ACT_DIM]);
    p.layers[1].b.iter_mut().skip(ACT_DIM).for_each(|b| *b = -40.0);
    p
}

#[test]
fn zero_policy_return_matches_standing_still() {
    // Standing still: theta = 0 and v = w = 0, so every step earns exp(-v_d^2 / (2 sigma_v^2)).
    let task = TaskParams::walk();
    let sigma_v = 0.5;
    let per_step = (-(task.desired_velocity * task.desired_velocity) / (2.0 * sigma_v * sigma_v)).exp();
    let expected = per_step * task.episode_length as f64;

    let mut seeds = ChaCha8Rng::seed_from_u64(7);
    let mut noise = ChaCha8Rng::seed_from_u64(8);
    let mut actor = ActorState::new(task, &mut seeds);
    let mut buf = ReplayBuffer::new(20 * task.episode_length);
    let policy = zero_action_policy();
    let returns = run_actor_steps(&policy, &mut actor, 20 * task.episode_length as u64, &mut buf, &mut noise, &mut seeds).unwrap();
    assert_eq!(returns.len(), 20);
    let mean = returns.iter().sum::<f64>() / 20.0;
    // the reset perturbation only moves the body a little before the joints settle
    assert!((mean - expected).abs() < 0.01 * expected, "mean {mean} vs {expected}");
}

#[test]
fn actor_rollouts_are_reproducible() {
    let policy = MlpParams::init(&[OBS_DIM, 8, 2 * ACT_DIM], false, &mut ChaCha8Rng::seed_from_u64(0));
    let roll = || {
        let mut seeds = ChaCha8Rng::seed_from_u64(1);
        let mut noise = ChaCha8Rng::seed_from_u64(2);
        let mut actor = ActorState::new(TaskParams::walk(), &mut seeds);
        let mut buf = ReplayBuffer::new(2000);
        let r = run_actor_steps(&policy, &mut actor, 1200, &mut buf, &mut noise, &mut seeds).unwrap();
        (r, buf.iter_fifo().cloned().collect::<Vec<_>>())
    };
    assert_eq!(roll(), roll());
}

#[test]
fn pure_abduction_gap_by_closed_form() {
    let spec = build_quadruped_mirror_spec();
    let unit = vec![1.0; ACT_DIM];
    let basis = |k: &[usize]| {
        let mut m = vec![0.0; ACT_DIM];
        k.iter().for_each(|&i| m[i] = 1.0);
        m
    };
    // KL between unit-variance Gaussians is half the squared mean distance.
    let half_sq = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    // front-left abduction on both sides: the pullback moves it to front-right with a flipped sign
    let e4 = GaussianHead { mean: basis(&[4]), stddev: unit.clone() };
    let mut pulled = vec![0.0; ACT_DIM];
    pulled[5] = -1.0;
    assert!((pointwise_gap(&e4, &e4, &spec).unwrap() - half_sq(&e4.mean, &pulled)).abs() < 1e-15);
    assert!((pointwise_gap(&e4, &e4, &spec).unwrap() - 1.0).abs() < 1e-15);

    // equal front abductions map to their own negation
    let front = GaussianHead { mean: basis(&[4, 5]), stddev: unit };
    let negated: Vec<f64> = front.mean.iter().map(|x| -x).collect();
    assert!((pointwise_gap(&front, &front, &spec).unwrap() - half_sq(&front.mean, &negated)).abs() < 1e-15);
    assert!((pointwise_gap(&front, &front, &spec).unwrap() - 4.0).abs() < 1e-15);
}

#[test]
fn conditions_consume_identical_environment_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        ratio: 2.5,
        ..quick_config(dir.path())
    };
    let (normal, _) = train_run(&cfg, 3, false, None).unwrap();
    let (augmented, _) = train_run(&cfg, 3, true, None).unwrap();
    let steps = |o: &mirrored_mpo::harness::RunOutcome| o.records.iter().map(|r| (r.learner_step, r.env_steps)).collect::<Vec<_>>();
    assert_eq!(steps(&normal), steps(&augmented));
    // ceil(2.5 * t) at every record
    for (t, env) in steps(&normal) {
        assert_eq!(env, (2.5 * t as f64).ceil() as u64);
    }
    assert_eq!(normal.env_steps, 300);
    // the learner waits until one batch is buffered: 2.5 * t >= 16 from t = 7 on
    assert_eq!(normal.updates, 120 - 6);
}

#[test]
fn zero_budget_writes_only_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    let cfg = ExperimentConfig {
        learner_steps: 0,
        ..quick_config(dir.path())
    };
    train_to_file(&cfg, 1, false, &path).unwrap();
    let (header, records) = read_metrics(&path).unwrap();
    assert!(records.is_empty());
    assert_eq!(header.seed, 1);
    assert_eq!(header.config_digest, cfg.for_run(1, false).digest());
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
}

#[test]
fn training_files_are_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    train_to_file(&cfg, 5, true, &a).unwrap();
    train_to_file(&cfg, 5, true, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (_, records) = read_metrics(&a).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.learner_step % 20 == 0 && r.wall_clock == 0.0));
}

#[test]
fn ten_seeds_give_twenty_files_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: (1..=10).collect(),
        learner_steps: 40,
        ..quick_config(dir.path())
    };
    let summary = run_experiment(&cfg).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 21);
    assert!(names.contains(&SUMMARY_FILE.to_string()));
    for seed in 1..=10 {
        assert!(names.contains(&metrics_file_name(seed, false)));
        assert!(names.contains(&metrics_file_name(seed, true)));
    }
    assert_eq!(summary.pairs.len(), 10);
    assert_eq!(summary.normal.median_curve.len(), 2);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    let s1 = run_experiment(&quick_config(one.path())).unwrap();
    let s2 = run_experiment(&ExperimentConfig {
        jobs: 3,
        ..quick_config(two.path())
    })
    .unwrap();
    assert_eq!(s1.pairs.len(), s2.pairs.len());
    for seed in [1, 2] {
        for augment in [false, true] {
            let name = metrics_file_name(seed, augment);
            let (h1, r1) = read_metrics(&one.path().join(&name)).unwrap();
            let (h2, r2) = read_metrics(&two.path().join(&name)).unwrap();
            // headers differ only in the output location and thread count, which the digest skips
            assert_eq!(h1.config_digest, h2.config_digest);
            assert_eq!(r1, r2);
        }
    }
}

#[test]
fn unwritable_output_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"not a directory").unwrap();
    let cfg = ExperimentConfig {
        learner_steps: 1_000_000_000,
        ..quick_config(&blocker.join("runs"))
    };
    let started = std::time::Instant::now();
    assert!(run_experiment(&cfg).is_err());
    assert!(started.elapsed().as_secs() < 5);
}
