use rand::{Rng, RngCore};

use crate::env::{SymQuad, TaskParams, Transition};
use crate::error::Result;
use crate::nets::{policy_forward, MlpParams};
use crate::replay::ReplayBuffer;

/// Environment plus the bookkeeping of the episode in progress.
#[derive(Clone, Debug)]
pub struct ActorState {
    env: SymQuad,
    obs: Vec<f64>,
    episode_return: f64,
    episodes_started: u64,
    env_steps: u64,
}

impl ActorState {
    /// Starts the first episode with a reset seed drawn from `seeds`.
    pub fn new<R: RngCore + ?Sized>(task: TaskParams, seeds: &mut R) -> Self {
        let mut env = SymQuad::new(task);
        let obs = env.reset(seeds.next_u64());
        Self {
            env,
            obs,
            episode_return: 0.0,
            episodes_started: 1,
            env_steps: 0,
        }
    }

    pub fn obs(&self) -> &[f64] {
        &self.obs
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes_started(&self) -> u64 {
        self.episodes_started
    }
}

/// Runs `n` environment steps with actions sampled from `policy`, pushing every transition into
/// `buf` and resetting on episode end. Reset seeds come from `seeds`, action noise from `rng`.
/// Returns the undiscounted returns of the episodes that completed.
pub fn run_actor_steps<R: Rng + ?Sized, S: RngCore + ?Sized>(
    policy: &MlpParams,
    actor: &mut ActorState,
    n: u64,
    buf: &mut ReplayBuffer,
    rng: &mut R,
    seeds: &mut S,
) -> Result<Vec<f64>> {
    let mut completed = Vec::new();
    for _ in 0..n {
        let action = policy_forward(policy, &actor.obs)?.sample(rng);
        let out = actor.env.step(&action)?;
        actor.episode_return += out.reward;
        actor.env_steps += 1;
        buf.push(Transition {
            s: std::mem::take(&mut actor.obs),
            a: action,
            r: out.reward,
            s_next: out.obs.clone(),
            done: out.done,
        });
        if out.done {
            completed.push(actor.episode_return);
            actor.episode_return = 0.0;
            actor.episodes_started += 1;
            actor.obs = actor.env.reset(seeds.next_u64());
        } else {
            actor.obs = out.obs;
        }
    }
    Ok(completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ACT_DIM, OBS_DIM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_policy() -> MlpParams {
        MlpParams::init(&[OBS_DIM, 8, 2 * ACT_DIM], true, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn one_step_grows_buffer_by_one() {
        let mut seeds = ChaCha8Rng::seed_from_u64(1);
        let mut actor = ActorState::new(TaskParams::walk(), &mut seeds);
        let mut buf = ReplayBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let done = run_actor_steps(&zero_policy(), &mut actor, 1, &mut buf, &mut rng, &mut seeds).unwrap();
        assert_eq!(buf.len(), 1);
        assert!(done.is_empty());
        assert_eq!(actor.env_steps(), 1);
    }

    #[test]
    fn episodes_reset_on_time_limit() {
        let task = TaskParams {
            episode_length: 10,
            ..TaskParams::walk()
        };
        let mut seeds = ChaCha8Rng::seed_from_u64(3);
        let mut actor = ActorState::new(task, &mut seeds);
        let mut buf = ReplayBuffer::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let done = run_actor_steps(&zero_policy(), &mut actor, 25, &mut buf, &mut rng, &mut seeds).unwrap();
        assert_eq!(done.len(), 2);
        assert_eq!(actor.episodes_started(), 3);
        let dones: Vec<bool> = buf.iter_fifo().map(|t| t.done).collect();
        assert!(dones[9] && dones[19]);
        assert_eq!(dones.iter().filter(|&&d| d).count(), 2);
        // the transition after a reset starts from the fresh observation
        assert_ne!(buf.get(10).unwrap().s, buf.get(9).unwrap().s_next);
    }
}
