use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mirrored_mpo::env::{self, TaskParams};
use mirrored_mpo::harness::experiment::{run_experiment, train_to_file};
use mirrored_mpo::harness::{ExperimentConfig, Task};
use mirrored_mpo::mpo::{self, LearnerState, MpoConfig, TemperatureMode};
use mirrored_mpo::nets::{grad_check, MlpParams};
use mirrored_mpo::replay::TransitionBatch;
use mirrored_mpo::symmetry::{build_quadruped_mirror_spec, validate_spec};
use mirrored_mpo::{ACT_DIM, OBS_DIM};

#[derive(Parser)]
#[command(name = "mirrored-mpo", version, about = "MPO with mirrored-data augmentation on a symmetric quadruped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition for one seed and write its metrics file.
    Train(TrainArgs),
    /// Run normal and augmented training for every seed and write a paired summary.
    Compare(CompareArgs),
    /// Check the mirror maps and the environment's equivariance.
    VerifySymmetry {
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients of the learner losses with finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags shared by `train` and `compare`; each overrides the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_action_samples: Option<usize>,
    #[arg(long)]
    learner_steps: Option<u64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    temperature: Option<TemperatureMode>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    wall_clock: Option<bool>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also save the final learner parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    overrides: Overrides,
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply(cfg: &mut ExperimentConfig, o: Overrides) {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { cfg.$f = v; })* };
    }
    set!(task, batch_size, n_action_samples, learner_steps, ratio, temperature, hidden, wall_clock, jobs, out);
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    let out_given = args.overrides.out.is_some();
    apply(&mut cfg, args.overrides);
    if let Some(a) = args.augment {
        cfg.augment = a;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if !out_given && args.config.is_none() {
        cfg.out = PathBuf::from("metrics.jsonl");
    }
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let (outcome, learner) = train_to_file(&cfg, seed, cfg.augment, &cfg.out)
        .with_context(|| format!("training into {}", cfg.out.display()))?;
    if let Some(path) = args.checkpoint {
        learner.save_checkpoint(&path)?;
    }
    println!(
        "seed {seed} augment {}: {} episodes, final return {:.3}, symmetry gap {:.5}, metrics in {}",
        cfg.augment,
        outcome.episodes.len(),
        outcome.final_return(),
        outcome.final_symmetry_gap,
        cfg.out.display()
    );
    Ok(())
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    apply(&mut cfg, args.overrides);
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    let summary = run_experiment(&cfg)?;
    for p in &summary.pairs {
        println!(
            "seed {:>3}: final return normal {:8.3} augmented {:8.3}  gap normal {:.5} augmented {:.5}",
            p.seed, p.normal.final_return, p.augmented.final_return, p.normal.final_symmetry_gap, p.augmented.final_symmetry_gap
        );
    }
    println!(
        "median AUC normal {:.3} augmented {:.3}; augmented wins {}/{}; median gap normal {:.5} augmented {:.5}",
        summary.normal.median_auc,
        summary.augmented.median_auc,
        summary.augmented_wins,
        summary.pairs.len(),
        summary.normal.median_symmetry_gap,
        summary.augmented.median_symmetry_gap
    );
    println!("summary written to {}", cfg.out.join("summary.json").display());
    Ok(())
}

fn verify_symmetry(pairs: usize, seed: u64) -> anyhow::Result<()> {
    let spec = build_quadruped_mirror_spec();
    let report = validate_spec(&spec);
    print!("{report}");
    if !report.all_passed() {
        bail!("mirror specification failed validation");
    }
    let task = TaskParams::walk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_state = 0.0f64;
    let mut worst_reward = 0.0f64;
    for _ in 0..pairs {
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = env::EnvState::from_observation(&obs, 0)?;
        let action: Vec<f64> = (0..ACT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let direct = env::step(&state, &action, &task)?;
        let mirrored = env::step(&state.mirrored(), &spec.mirror_action(&action)?, &task)?;
        let expected = spec.mirror_obs(&direct.obs)?;
        let diff = expected.iter().zip(&mirrored.obs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_state = worst_state.max(diff);
        worst_reward = worst_reward.max((direct.reward - mirrored.reward).abs());
    }
    println!("equivariance over {pairs} pairs: max state error {worst_state:e}, max reward error {worst_reward:e}");
    if worst_state > 1e-12 || worst_reward > 1e-12 {
        bail!("environment is not mirror-equivariant within 1e-12");
    }
    Ok(())
}

fn grad_check_cmd(seed: u64) -> anyhow::Result<()> {
    let spec = build_quadruped_mirror_spec();
    let cfg = MpoConfig {
        batch_size: 4,
        n_action_samples: 4,
        policy_hidden: vec![5],
        q_hidden: vec![5],
        ..MpoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ls = LearnerState::new(&cfg, seed)?;
    ls.policy = MlpParams::init(&cfg.policy_sizes(), false, &mut rng);
    let random = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
    let batch = TransitionBatch {
        s: random(&mut rng, 4, OBS_DIM),
        a: random(&mut rng, 4, ACT_DIM),
        r: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
        s_next: random(&mut rng, 4, OBS_DIM),
        done: vec![false, true, false, false],
    };
    let td_rows = mpo::prepare_td(&ls, &batch, &mut rng)?;
    let states = random(&mut rng, 4, OBS_DIM);
    let improve = mpo::sample_improvement(&ls, &states, 4, &mut rng)?;

    let mut failed = false;
    for augment in [false, true] {
        let td = grad_check(
            |x| {
                let mut l = ls.clone();
                l.q = MlpParams::from_flat(&ls.q.sizes, x).expect("same size");
                let (g, _) = mpo::td_loss_graph(&l, &td_rows, &spec, augment, 4.0).expect("valid rows");
                (g.value(), g.gradients(&l.q).expect("scalar loss").to_flat())
            },
            &ls.q.to_flat(),
        );
        let pi = grad_check(
            |x| {
                let mut l = ls.clone();
                l.policy = MlpParams::from_flat(&ls.policy.sizes, x).expect("same size");
                let (g, _) = mpo::improvement_loss_graph(&l, &improve, &spec, augment, 4.0).expect("valid rows");
                (g.value(), g.gradients(&l.policy).expect("scalar loss").to_flat())
            },
            &ls.policy.to_flat(),
        );
        for (name, r) in [("td loss", td), ("policy loss", pi)] {
            let ok = r.max_rel_error < 1e-4;
            failed |= !ok;
            println!(
                "{name} (augment {augment}): max relative error {:.3e} over {} parameters [{}]",
                r.max_rel_error,
                r.checked,
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    if failed {
        bail!("gradient check failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::VerifySymmetry { pairs, seed } => verify_symmetry(pairs, seed),
        Command::GradCheck { seed } => grad_check_cmd(seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
