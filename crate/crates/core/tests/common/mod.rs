//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mirrored_mpo::env::Transition;
use mirrored_mpo::mpo::{self, ImproveRows, LearnerState, MpoConfig, TdRows};
use mirrored_mpo::nets::{grad_check, GradCheckReport, MlpParams};
use mirrored_mpo::replay::{ReplayBuffer, TransitionBatch};
use mirrored_mpo::symmetry::MirrorSpec;
use mirrored_mpo::{ACT_DIM, OBS_DIM};

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lim: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-lim..lim))
}

pub fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    Transition {
        s: (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a: (0..ACT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
        r: rng.random_range(0.0..1.0),
        s_next: (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
        done: rng.random_range(0.0..1.0) < 0.2,
    }
}

pub fn random_buffer(n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ReplayBuffer::new(n.max(1));
    for _ in 0..n {
        buf.push(random_transition(&mut rng));
    }
    buf
}

/// Tiny learner whose policy output layer is random, so every parameter carries gradient.
pub fn miniature_learner(seed: u64, hidden: usize) -> LearnerState {
    let cfg = MpoConfig {
        batch_size: 4,
        n_action_samples: 4,
        policy_hidden: vec![hidden],
        q_hidden: vec![hidden],
        ..MpoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut ls = LearnerState::new(&cfg, seed).expect("valid config");
    ls.policy = MlpParams::init(&cfg.policy_sizes(), false, &mut rng);
    ls.q_target = MlpParams::init(&cfg.q_sizes(), false, &mut rng);
    ls
}

/// 4 transitions and 4 states with 4 sampled actions each.
pub fn miniature_rows(ls: &LearnerState, seed: u64) -> (TdRows, ImproveRows) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng)).collect();
    let td = mpo::prepare_td(ls, &TransitionBatch::from_transitions(&ts), &mut rng).expect("4 rows");
    let states = uniform(&mut rng, 4, OBS_DIM, 1.0);
    let improve = mpo::sample_improvement(ls, &states, 4, &mut rng).expect("4 states");
    (td, improve)
}

pub fn td_grad_check(ls: &LearnerState, rows: &TdRows, spec: &MirrorSpec, augment: bool) -> GradCheckReport {
    grad_check(
        |x| {
            let mut l = ls.clone();
            l.q = MlpParams::from_flat(&ls.q.sizes, x).expect("same size");
            let (g, _) = mpo::td_loss_graph(&l, rows, spec, augment, rows.y.len() as f64).expect("valid rows");
            (g.value(), g.gradients(&l.q).expect("scalar").to_flat())
        },
        &ls.q.to_flat(),
    )
}

pub fn policy_grad_check(ls: &LearnerState, rows: &ImproveRows, spec: &MirrorSpec, augment: bool) -> GradCheckReport {
    grad_check(
        |x| {
            let mut l = ls.clone();
            l.policy = MlpParams::from_flat(&ls.policy.sizes, x).expect("same size");
            let k = rows.states.nrows() as f64;
            let (g, _) = mpo::improvement_loss_graph(&l, rows, spec, augment, k).expect("valid rows");
            (g.value(), g.gradients(&l.policy).expect("scalar").to_flat())
        },
        &ls.policy.to_flat(),
    )
}

/// Largest absolute difference between two parameter sets of the same shape.
pub fn max_abs_diff(a: &MlpParams, b: &MlpParams) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
