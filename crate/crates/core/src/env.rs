//! `SymQuad`: an analytic quadruped locomotion MDP.
//!
//! Each leg has a sagittal hip joint and a lateral abduction joint. Forward velocity is driven
//! by hip strokes weighted by `cos(abduction)`, lateral velocity by `sin(abduction)`, and pitch
//! by the front/hind hip imbalance. Every term is even or odd in the abduction coordinates and
//! symmetric under left/right leg exchange, so the dynamics commute with the sagittal mirror.
//! Sums over legs are taken as `(left + right)` pairs so the commutation is exact in floating
//! point, not just up to rounding.
//!
//! Observation layout: `0..4` hip angles, `4..8` abduction angles, `8..12` hip velocities,
//! `12..16` abduction velocities, `16` forward velocity, `17` lateral velocity, `18` pitch,
//! `19` pitch rate. Action layout: `0..4` hip torques, `4..8` abduction torques. Leg order is
//! FL, FR, HL, HR everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{ACT_DIM, OBS_DIM};

pub const DT: f64 = 0.02;
pub const JOINT_LIMIT: f64 = 1.2;
pub const PITCH_LIMIT: f64 = 1.2;

const K_U: f64 = 20.0;
const K_D: f64 = 2.0;
const K_S: f64 = 10.0;
const MU: f64 = 0.05;
const C_F: f64 = 0.6;
const C_L: f64 = 0.3;
const C_T: f64 = 1.5;
const K_P: f64 = 4.0;
const K_D_THETA: f64 = 0.5;
pub const LATERAL_PENALTY: f64 = 0.1;
pub const SIGMA_V: f64 = 0.5;

const RESET_SPREAD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub h: [f64; 4],
    pub b: [f64; 4],
    pub h_dot: [f64; 4],
    pub b_dot: [f64; 4],
    pub v: f64,
    pub w: f64,
    pub theta: f64,
    pub omega: f64,
    pub step_count: usize,
}

impl Default for EnvState {
    fn default() -> Self {
        Self {
            h: [0.0; 4],
            b: [0.0; 4],
            h_dot: [0.0; 4],
            b_dot: [0.0; 4],
            v: 0.0,
            w: 0.0,
            theta: 0.0,
            omega: 0.0,
            step_count: 0,
        }
    }
}

fn swap_legs(x: [f64; 4]) -> [f64; 4] {
    [x[1], x[0], x[3], x[2]]
}

fn neg(x: [f64; 4]) -> [f64; 4] {
    x.map(|v| -v)
}

impl EnvState {
    /// State-level reflection: legs swap sides, lateral quantities flip sign.
    pub fn mirrored(&self) -> Self {
        Self {
            h: swap_legs(self.h),
            b: neg(swap_legs(self.b)),
            h_dot: swap_legs(self.h_dot),
            b_dot: neg(swap_legs(self.b_dot)),
            v: self.v,
            w: -self.w,
            theta: self.theta,
            omega: self.omega,
            step_count: self.step_count,
        }
    }

    /// Rebuilds a state from an observation vector. `step_count` is not observed.
    pub fn from_observation(obs: &[f64], step_count: usize) -> Result<Self> {
        if obs.len() != OBS_DIM {
            return Err(Error::dims("EnvState::from_observation", OBS_DIM, obs.len()));
        }
        let block = |k: usize| -> [f64; 4] { [obs[4 * k], obs[4 * k + 1], obs[4 * k + 2], obs[4 * k + 3]] };
        Ok(Self {
            h: block(0),
            b: block(1),
            h_dot: block(2),
            b_dot: block(3),
            v: obs[16],
            w: obs[17],
            theta: obs[18],
            omega: obs[19],
            step_count,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub desired_velocity: f64,
    pub episode_length: usize,
}

impl TaskParams {
    pub const EPISODE_LENGTH: usize = 500;

    pub fn walk() -> Self {
        Self {
            desired_velocity: 0.5,
            episode_length: Self::EPISODE_LENGTH,
        }
    }

    pub fn run() -> Self {
        Self {
            desired_velocity: 2.0,
            episode_length: Self::EPISODE_LENGTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.desired_velocity > 0.0) || self.episode_length < 1 {
            return Err(Error::Config(format!("invalid task parameters {self:?}")));
        }
        Ok(())
    }
}

/// One environment step as stored in replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.s.len() != OBS_DIM {
            return Err(Error::dims("Transition::s", OBS_DIM, self.s.len()));
        }
        if self.s_next.len() != OBS_DIM {
            return Err(Error::dims("Transition::s_next", OBS_DIM, self.s_next.len()));
        }
        if self.a.len() != ACT_DIM {
            return Err(Error::dims("Transition::a", ACT_DIM, self.a.len()));
        }
        if !self.r.is_finite() {
            return Err(Error::ContractViolation(format!("non-finite reward {}", self.r)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub fn observe(state: &EnvState) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.extend_from_slice(&state.h);
    obs.extend_from_slice(&state.b);
    obs.extend_from_slice(&state.h_dot);
    obs.extend_from_slice(&state.b_dot);
    obs.extend_from_slice(&[state.v, state.w, state.theta, state.omega]);
    obs
}

/// Initial state with joints and joint velocities uniform in `[-0.1, 0.1]`.
pub fn reset(seed: u64) -> (EnvState, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> [f64; 4] { std::array::from_fn(|_| rng.random_range(-RESET_SPREAD..=RESET_SPREAD)) };
    let state = EnvState {
        h: draw(),
        b: draw(),
        h_dot: draw(),
        b_dot: draw(),
        ..EnvState::default()
    };
    let obs = observe(&state);
    (state, obs)
}

/// Sum over legs grouped as `(FL + FR) + (HL + HR)`; invariant under the leg swap bit-for-bit.
fn leg_sum(x: [f64; 4]) -> f64 {
    (x[0] + x[1]) + (x[2] + x[3])
}

/// Semi-implicit Euler joint update with clamping; returns (position, velocity).
fn joint_update(pos: f64, vel: f64, torque: f64) -> (f64, f64) {
    let acc = K_U * torque - K_D * vel - K_S * pos;
    let vel = vel + acc * DT;
    let pos = pos + vel * DT;
    if pos > JOINT_LIMIT {
        (JOINT_LIMIT, 0.0)
    } else if pos < -JOINT_LIMIT {
        (-JOINT_LIMIT, 0.0)
    } else {
        (pos, vel)
    }
}

/// Reward for a post-step state.
pub fn reward(state: &EnvState, task: &TaskParams) -> f64 {
    let upright = 0.5 * (1.0 + state.theta.cos());
    let dv = state.v - task.desired_velocity;
    let velocity = (-(dv * dv) / (2.0 * SIGMA_V * SIGMA_V)).exp();
    upright * velocity - LATERAL_PENALTY * state.w * state.w
}

/// Advances the state by one control step. Actions are clipped to `[-1, 1]`.
pub fn step(state: &EnvState, action: &[f64], task: &TaskParams) -> Result<StepResult> {
    if action.len() != ACT_DIM {
        return Err(Error::dims("env::step action", ACT_DIM, action.len()));
    }
    if let Some(bad) = action.iter().find(|a| !a.is_finite()) {
        return Err(Error::ContractViolation(format!("non-finite action entry {bad}")));
    }
    let u: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();

    let mut next = state.clone();
    for i in 0..4 {
        (next.h[i], next.h_dot[i]) = joint_update(state.h[i], state.h_dot[i], u[i]);
        (next.b[i], next.b_dot[i]) = joint_update(state.b[i], state.b_dot[i], u[4 + i]);
    }

    let stroke: [f64; 4] = std::array::from_fn(|i| next.h_dot[i] * next.h[i].cos() * next.b[i].cos());
    next.v = (1.0 - MU) * state.v + C_F * leg_sum(stroke) * DT;

    let lateral: [f64; 4] = next.b.map(f64::sin);
    next.w = (1.0 - MU) * state.w + C_L * leg_sum(lateral) * DT;

    let s = next.h.map(f64::sin);
    let imbalance = (s[0] + s[1]) - (s[2] + s[3]);
    let pitch_acc = C_T * imbalance - K_P * state.theta.sin() - K_D_THETA * state.omega;
    next.omega = state.omega + pitch_acc * DT;
    next.theta = state.theta + next.omega * DT;

    next.step_count = state.step_count + 1;
    let r = reward(&next, task);
    let done = next.theta.abs() > PITCH_LIMIT || next.step_count >= task.episode_length;
    let obs = observe(&next);
    Ok(StepResult {
        state: next,
        obs,
        reward: r,
        done,
    })
}

/// Stateful wrapper used by the actor loop.
#[derive(Clone, Debug)]
pub struct SymQuad {
    pub task: TaskParams,
    state: EnvState,
}

impl SymQuad {
    pub fn new(task: TaskParams) -> Self {
        Self {
            task,
            state: EnvState::default(),
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let (state, obs) = reset(seed);
        self.state = state;
        obs
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let out = step(&self.state, action, &self.task)?;
        self.state = out.state.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::build_quadruped_mirror_spec;

    fn random_state(rng: &mut ChaCha8Rng) -> EnvState {
        let mut arr = |lim: f64| -> [f64; 4] { std::array::from_fn(|_| rng.random_range(-lim..lim)) };
        EnvState {
            h: arr(JOINT_LIMIT),
            b: arr(JOINT_LIMIT),
            h_dot: arr(5.0),
            b_dot: arr(5.0),
            v: rng.random_range(-2.0..2.0),
            w: rng.random_range(-1.0..1.0),
            theta: rng.random_range(-1.0..1.0),
            omega: rng.random_range(-2.0..2.0),
            step_count: rng.random_range(0..TaskParams::EPISODE_LENGTH),
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let (a, oa) = reset(7);
        let (b, ob) = reset(7);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        let (c, _) = reset(8);
        assert_ne!(a.h, c.h);
        let (_, o0) = reset(0);
        assert_eq!(&o0[16..20], &[0.0; 4]);
        assert!(o0[..16].iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn zero_state_zero_action_reward() {
        let task = TaskParams::walk();
        let out = step(&EnvState::default(), &[0.0; ACT_DIM], &task).unwrap();
        assert_eq!(out.state.v, 0.0);
        assert_eq!(out.state.theta, 0.0);
        assert!((out.reward - (-0.5f64).exp()).abs() < 1e-15);
        assert!((out.reward - 0.6065).abs() < 1e-4);
        assert!(!out.done);
    }

    #[test]
    fn inverted_torso_has_no_upright_reward() {
        let state = EnvState {
            theta: std::f64::consts::PI,
            v: 0.5,
            ..EnvState::default()
        };
        assert!(reward(&state, &TaskParams::walk()).abs() < 1e-15);
    }

    #[test]
    fn observe_layout() {
        assert_eq!(observe(&EnvState::default()), vec![0.0; OBS_DIM]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng);
        let obs = observe(&s);
        assert_eq!(obs, observe(&s));
        assert_eq!(obs[5], s.b[1]);
        assert_eq!(obs[17], s.w);
        assert_eq!(EnvState::from_observation(&obs, s.step_count).unwrap(), s);
    }

    #[test]
    fn observe_commutes_with_mirror() {
        let spec = build_quadruped_mirror_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = random_state(&mut rng);
            assert_eq!(spec.mirror_obs(&observe(&s)).unwrap(), observe(&s.mirrored()));
        }
    }

    #[test]
    fn step_commutes_with_mirror() {
        let spec = build_quadruped_mirror_spec();
        let task = TaskParams::run();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let a: Vec<f64> = (0..ACT_DIM).map(|_| rng.random_range(-1.5..1.5)).collect();
            let out = step(&s, &a, &task).unwrap();
            let ma = spec.mirror_action(&a).unwrap();
            let mout = step(&s.mirrored(), &ma, &task).unwrap();
            let expected = spec.mirror_obs(&out.obs).unwrap();
            for (x, y) in mout.obs.iter().zip(&expected) {
                assert!((x - y).abs() <= 1e-12);
            }
            assert!((out.reward - mout.reward).abs() <= 1e-12);
            assert_eq!(out.done, mout.done);
        }
    }

    #[test]
    fn joint_clamp_zeroes_velocity() {
        let state = EnvState {
            h: [1.19; 4],
            h_dot: [3.0; 4],
            ..EnvState::default()
        };
        let out = step(&state, &[1.0; ACT_DIM], &TaskParams::walk()).unwrap();
        assert_eq!(out.state.h, [JOINT_LIMIT; 4]);
        assert_eq!(out.state.h_dot, [0.0; 4]);
    }

    #[test]
    fn episode_ends_on_time_limit_or_fall() {
        let task = TaskParams {
            desired_velocity: 0.5,
            episode_length: 3,
        };
        let mut env = SymQuad::new(task);
        env.reset(0);
        let zero = [0.0; ACT_DIM];
        assert!(!env.step(&zero).unwrap().done);
        assert!(!env.step(&zero).unwrap().done);
        assert!(env.step(&zero).unwrap().done);

        let falling = EnvState {
            theta: 1.19,
            omega: 5.0,
            ..EnvState::default()
        };
        assert!(step(&falling, &zero, &TaskParams::walk()).unwrap().done);
    }

    #[test]
    fn rejects_bad_actions() {
        let s = EnvState::default();
        let task = TaskParams::walk();
        let mut a = [0.0; ACT_DIM];
        a[3] = f64::NAN;
        assert!(matches!(step(&s, &a, &task), Err(Error::ContractViolation(_))));
        assert!(step(&s, &[0.0; 4], &task).is_err());
    }

    #[test]
    fn random_rollout_stays_bounded() {
        let task = TaskParams::run();
        let mut env = SymQuad::new(task);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        env.reset(4);
        let mut episode = 0;
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..ACT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = env.step(&a).unwrap();
            assert!(out.state.v.abs() <= 50.0);
            // |w| is bounded by C_L * 4 * DT / MU
            let w_max = C_L * 4.0 * DT / MU;
            assert!(out.reward <= 1.0 && out.reward >= -LATERAL_PENALTY * w_max * w_max);
            assert!(out.state.h.iter().chain(&out.state.b).all(|x| x.abs() <= JOINT_LIMIT));
            if out.done {
                episode += 1;
                env.reset(4 + episode);
            }
        }
    }
}
