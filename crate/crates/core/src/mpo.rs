//! The MPO learner with mirrored-data twins.
//!
//! One learner step does:
//!
//! 1. Policy evaluation: 1-step TD targets `y = r + gamma * Q_target(s', a')` with
//!    `a' ~ pi_old(.|s')`, squared error against `Q(s, a)` and, when augmenting, against
//!    `Q(M s, M a)` with the same `y`.
//! 2. Policy improvement step 1: `N` actions per sampled state from `pi_old`, weights
//!    `q_ij ∝ exp(Q_ij / eta)` per state.
//! 3. Policy improvement step 2: weighted maximum likelihood over `(s_j, a_i, q_ij)` and, when
//!    augmenting, over `(M s_j, M a_i, q_ij)`, plus a KL penalty to `pi_old`.
//!
//! Every `target_period` updates the target Q-network and the old policy are refreshed.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::checkpoint::{self, NamedArray};
use crate::nets::gaussian::{kl_on_tape, log_prob_on_tape, policy_on_tape, HeadVars};
use crate::nets::{
    policy_forward_batch, q_forward_batch, Adam, AdamConfig, MlpParams, MlpVars, Tape, Var,
};
use crate::replay::{ReplayBuffer, TransitionBatch};
use crate::symmetry::MirrorSpec;
use crate::{ACT_DIM, OBS_DIM};

/// Bounds of the temperature search.
pub const ETA_MIN: f64 = 1e-6;
pub const ETA_MAX: f64 = 1e6;
const GOLDEN_ITERS: usize = 100;

/// Default width of both hidden layers of both networks.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TemperatureMode {
    /// Solve the temperature dual each step under KL bound `eps`.
    Dual { eps: f64 },
    /// Use a fixed temperature.
    Fixed { eta: f64 },
}

impl Default for TemperatureMode {
    fn default() -> Self {
        TemperatureMode::Dual { eps: 0.1 }
    }
}

impl std::str::FromStr for TemperatureMode {
    type Err = Error;

    /// Parses `dual:EPS` or `fixed:ETA`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("temperature must be dual:EPS or fixed:ETA, got {s}")))?;
        let x: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("bad temperature value {value}")))?;
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Config(format!("temperature parameter must be positive, got {x}")));
        }
        match kind {
            "dual" => Ok(TemperatureMode::Dual { eps: x }),
            "fixed" => Ok(TemperatureMode::Fixed { eta: x }),
            other => Err(Error::Config(format!("unknown temperature mode {other}"))),
        }
    }
}

impl std::fmt::Display for TemperatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TemperatureMode::Dual { eps } => write!(f, "dual:{eps}"),
            TemperatureMode::Fixed { eta } => write!(f, "fixed:{eta}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpoConfig {
    pub gamma: f64,
    /// KL penalty coefficient towards the old policy.
    pub beta: f64,
    /// Sampled actions per state in the nonparametric step.
    pub n_action_samples: usize,
    /// States per improvement batch; the TD minibatch uses the same size.
    pub batch_size: usize,
    pub target_period: u64,
    pub temperature: TemperatureMode,
    pub adam: AdamConfig,
    pub policy_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
}

impl Default for MpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: 1.0,
            n_action_samples: 16,
            batch_size: 256,
            target_period: 250,
            temperature: TemperatureMode::default(),
            adam: AdamConfig::default(),
            policy_hidden: vec![DEFAULT_HIDDEN; 2],
            q_hidden: vec![DEFAULT_HIDDEN; 2],
        }
    }
}

impl MpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.n_action_samples < 2 {
            return Err(Error::Config("need at least 2 action samples per state".into()));
        }
        if self.batch_size < 1 || self.target_period < 1 {
            return Err(Error::Config("batch size and target period must be >= 1".into()));
        }
        Ok(())
    }

    pub fn policy_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.policy_hidden);
        s.push(2 * ACT_DIM);
        s
    }

    pub fn q_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM + ACT_DIM];
        s.extend(&self.q_hidden);
        s.push(1);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub q: MlpParams,
    pub q_target: MlpParams,
    pub policy: MlpParams,
    pub old_policy: MlpParams,
    /// Temperature used by the most recent step (the fixed value in fixed mode).
    pub eta: f64,
    pub beta: f64,
    pub learner_step: u64,
    pub target_period: u64,
    pub gamma: f64,
    pub temperature: TemperatureMode,
    pub n_action_samples: usize,
    pub batch_size: usize,
    pub q_opt: Adam,
    pub policy_opt: Adam,
}

impl LearnerState {
    /// Fresh learner. The policy output layer starts at zero, so the initial policy is centered
    /// with stddev `softplus(0)` everywhere.
    pub fn new(config: &MpoConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let policy = MlpParams::init(&config.policy_sizes(), true, &mut rng);
        let q = MlpParams::init(&config.q_sizes(), false, &mut rng);
        let eta = match config.temperature {
            TemperatureMode::Fixed { eta } => eta,
            TemperatureMode::Dual { .. } => 1.0,
        };
        Ok(Self {
            q_target: q.clone(),
            old_policy: policy.clone(),
            q_opt: Adam::new(config.adam, &q),
            policy_opt: Adam::new(config.adam, &policy),
            q,
            policy,
            eta,
            beta: config.beta,
            learner_step: 0,
            target_period: config.target_period,
            gamma: config.gamma,
            temperature: config.temperature,
            n_action_samples: config.n_action_samples,
            batch_size: config.batch_size,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.beta >= 0.0) || !(0.0..1.0).contains(&self.gamma) || self.target_period < 1 {
            return Err(Error::ContractViolation("learner state scalars out of range".into()));
        }
        self.q.validate()?;
        self.q_target.validate()?;
        self.policy.validate()?;
        self.old_policy.validate()
    }

    /// Network parameters and scalars as named arrays (optimizer moments are not included).
    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let mut out = checkpoint::mlp_to_arrays("q", &self.q);
        out.extend(checkpoint::mlp_to_arrays("q_target", &self.q_target));
        out.extend(checkpoint::mlp_to_arrays("policy", &self.policy));
        out.extend(checkpoint::mlp_to_arrays("old_policy", &self.old_policy));
        out.push(NamedArray::scalar("eta", self.eta));
        out.push(NamedArray::scalar("beta", self.beta));
        out.push(NamedArray::scalar("gamma", self.gamma));
        out.push(NamedArray::scalar("learner_step", self.learner_step as f64));
        out
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.to_arrays())
    }
}

/// Rows for the TD objective with their (constant) targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TdRows {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub y: Vec<f64>,
}

/// Output of the nonparametric step for `K` states and `N` actions per state.
#[derive(Clone, Debug, PartialEq)]
pub struct ImproveRows {
    /// `K x obs_dim`.
    pub states: Array2<f64>,
    /// `(K * N) x act_dim`; row `j * N + i` is action `i` of state `j`.
    pub actions: Array2<f64>,
    /// Same row order as `actions`.
    pub weights: Vec<f64>,
    pub n: usize,
    pub eta: f64,
    /// Mean over states of `KL(q_j || uniform)`.
    pub weights_kl: f64,
}

/// Everything one learner update consumes. The normalizers divide the TD sum and the KL sum.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub td: TdRows,
    pub improve: ImproveRows,
    pub td_norm: f64,
    pub kl_norm: f64,
}

impl PreparedBatch {
    /// Appends the mirror image of every row: `(M s, M a, y)` for TD and `(M s_j, M a_i, q_ij)`
    /// for improvement. Normalizers are kept, so the result run without augmentation optimizes
    /// the same objective as the original run with augmentation.
    pub fn union_with_mirror(&self, spec: &MirrorSpec) -> Result<Self> {
        let stack = |a: &Array2<f64>, b: &Array2<f64>| {
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("same widths")
        };
        let ms = spec.mirror_obs_rows(self.td.s.view())?;
        let ma = spec.mirror_action_rows(self.td.a.view())?;
        let mstates = spec.mirror_obs_rows(self.improve.states.view())?;
        let mactions = spec.mirror_action_rows(self.improve.actions.view())?;
        let mut y = self.td.y.clone();
        y.extend_from_slice(&self.td.y);
        let mut weights = self.improve.weights.clone();
        weights.extend_from_slice(&self.improve.weights);
        Ok(Self {
            td: TdRows {
                s: stack(&self.td.s, &ms),
                a: stack(&self.td.a, &ma),
                y,
            },
            improve: ImproveRows {
                states: stack(&self.improve.states, &mstates),
                actions: stack(&self.improve.actions, &mactions),
                weights,
                ..self.improve.clone()
            },
            ..self.clone()
        })
    }
}

/// A recorded loss with handles to the parameters it is differentiated against.
pub struct LossGraph {
    pub tape: Tape,
    pub loss: Var,
    pub params: MlpVars,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }

    /// Reverse-mode gradient in the shape of `like`.
    pub fn gradients(&self, like: &MlpParams) -> Result<MlpParams> {
        let g = self.tape.backward(self.loss)?;
        Ok(self.params.grads(&g, like))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TdDiagnostics {
    pub loss: f64,
    pub loss_original: f64,
    pub loss_mirrored: f64,
    pub mean_target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImproveDiagnostics {
    pub loss: f64,
    pub nll_original: f64,
    pub nll_mirrored: f64,
    /// Mean `KL(pi_old || pi)` over the original states.
    pub mean_kl: f64,
    pub eta: f64,
    pub weights_kl: f64,
}

/// Normalizes `exp(Q_ij / eta)` over samples `i` for every state `j`.
///
/// `q_values` is `N x K`: one column per state.
pub fn compute_weights(q_values: ArrayView2<f64>, eta: f64) -> Array2<f64> {
    assert!(eta > 0.0, "temperature must be positive");
    let mut w = q_values.to_owned();
    for mut col in w.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        col.mapv_inplace(|x| ((x - max) / eta).exp());
        let z = col.sum();
        col.mapv_inplace(|x| x / z);
    }
    w
}

/// Mean over columns of `KL(w_j || uniform)`.
pub fn mean_kl_to_uniform(weights: ArrayView2<f64>) -> f64 {
    let n = weights.nrows() as f64;
    let total: f64 = weights
        .columns()
        .into_iter()
        .map(|col| col.iter().filter(|&&q| q > 0.0).map(|&q| q * (q * n).ln()).sum::<f64>())
        .sum();
    total / weights.ncols() as f64
}

/// `g(eta) = eta * eps + eta * mean_j ln(mean_i exp(Q_ij / eta))`, evaluated stably.
pub fn temperature_dual(q_values: ArrayView2<f64>, eps: f64, eta: f64) -> f64 {
    let n = q_values.nrows() as f64;
    let mut acc = 0.0;
    for col in q_values.columns() {
        let max = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let s: f64 = col.iter().map(|&x| ((x - max) / eta).exp()).sum();
        acc += max + eta * (s / n).ln();
    }
    eta * eps + acc / q_values.ncols() as f64
}

/// Minimizes the temperature dual by golden-section search over `ln(eta)` in
/// `[ln ETA_MIN, ln ETA_MAX]`.
pub fn solve_temperature(q_values: ArrayView2<f64>, eps: f64) -> f64 {
    assert!(eps > 0.0, "KL bound must be positive");
    let g = |t: f64| temperature_dual(q_values, eps, t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (ETA_MIN.ln(), ETA_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..GOLDEN_ITERS {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    (0.5 * (a + b)).exp().clamp(ETA_MIN, ETA_MAX)
}

fn ensure_rows(rows: usize, context: &'static str) -> Result<()> {
    if rows == 0 {
        return Err(Error::InsufficientData {
            requested: 1,
            available: 0,
        });
    }
    let _ = context;
    Ok(())
}

/// TD targets for a batch: `y = r` on terminal transitions, otherwise
/// `r + gamma * Q_target(s', a')` with one `a' ~ pi_old(.|s')`.
pub fn td_targets<R: Rng + ?Sized>(ls: &LearnerState, batch: &TransitionBatch, rng: &mut R) -> Result<Vec<f64>> {
    ensure_rows(batch.len(), "td_targets")?;
    let next = policy_forward_batch(&ls.old_policy, batch.s_next.view())?;
    let a_next = next.sample_n(1, rng);
    let q_next = q_forward_batch(&ls.q_target, batch.s_next.view(), a_next.view())?;
    Ok(batch
        .r
        .iter()
        .zip(&batch.done)
        .zip(&q_next)
        .map(|((&r, &done), &qn)| if done { r } else { r + ls.gamma * qn })
        .collect())
}

pub fn prepare_td<R: Rng + ?Sized>(ls: &LearnerState, batch: &TransitionBatch, rng: &mut R) -> Result<TdRows> {
    let y = td_targets(ls, batch, rng)?;
    Ok(TdRows {
        s: batch.s.clone(),
        a: batch.a.clone(),
        y,
    })
}

fn squared_error_sum(tape: &mut Tape, q: &MlpVars, s: &Array2<f64>, a: &Array2<f64>, y: Var) -> Result<Var> {
    let x = ndarray::concatenate(Axis(1), &[s.view(), a.view()]).map_err(|e| Error::ContractViolation(e.to_string()))?;
    let xv = tape.constant(x);
    let pred = q.forward(tape, xv);
    let diff = tape.sub(y, pred);
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// Squared TD error summed over rows and divided by `norm`; with `augment` the mirrored rows
/// `(M s, M a)` against the same targets are added.
pub fn td_loss_graph(
    ls: &LearnerState,
    rows: &TdRows,
    spec: &MirrorSpec,
    augment: bool,
    norm: f64,
) -> Result<(LossGraph, TdDiagnostics)> {
    ensure_rows(rows.y.len(), "td_loss")?;
    let mut tape = Tape::new();
    let params = ls.q.on_tape(&mut tape);
    let y = tape.constant(Array2::from_shape_vec((rows.y.len(), 1), rows.y.clone()).expect("column"));
    let orig = squared_error_sum(&mut tape, &params, &rows.s, &rows.a, y)?;
    let mut diag = TdDiagnostics {
        loss_original: tape.scalar(orig) / norm,
        mean_target: rows.y.iter().sum::<f64>() / rows.y.len() as f64,
        ..TdDiagnostics::default()
    };
    let mut total = orig;
    if augment {
        let ms = spec.mirror_obs_rows(rows.s.view())?;
        let ma = spec.mirror_action_rows(rows.a.view())?;
        let mirrored = squared_error_sum(&mut tape, &params, &ms, &ma, y)?;
        diag.loss_mirrored = tape.scalar(mirrored) / norm;
        total = tape.add(orig, mirrored);
    }
    let loss = tape.scale(total, 1.0 / norm);
    diag.loss = tape.scalar(loss);
    Ok((LossGraph { tape, loss, params }, diag))
}

/// TD loss for a sampled batch: targets from the target network and old policy, mean squared
/// error over the batch (plus the mirrored twin when `augment` is set).
pub fn td_losses<R: Rng + ?Sized>(
    ls: &LearnerState,
    batch: &TransitionBatch,
    spec: &MirrorSpec,
    augment: bool,
    rng: &mut R,
) -> Result<(LossGraph, TdDiagnostics)> {
    let rows = prepare_td(ls, batch, rng)?;
    td_loss_graph(ls, &rows, spec, augment, batch.len() as f64)
}

/// Nonparametric step: `N` actions per state from the old policy, Q-values from the current
/// critic, and normalized weights.
pub fn sample_improvement<R: Rng + ?Sized>(
    ls: &LearnerState,
    states: &Array2<f64>,
    n: usize,
    rng: &mut R,
) -> Result<ImproveRows> {
    ensure_rows(states.nrows(), "sample_improvement")?;
    if n < 2 {
        return Err(Error::ContractViolation("need at least 2 action samples per state".into()));
    }
    let k = states.nrows();
    let old = policy_forward_batch(&ls.old_policy, states.view())?;
    let actions = old.sample_n(n, rng);
    let mut repeated = Array2::zeros((k * n, states.ncols()));
    for j in 0..k {
        for i in 0..n {
            repeated.row_mut(j * n + i).assign(&states.row(j));
        }
    }
    let q = q_forward_batch(&ls.q, repeated.view(), actions.view())?;
    // N x K, column j holds the samples of state j
    let q_table = Array2::from_shape_vec((k, n), q).expect("k * n values").reversed_axes();
    let eta = match ls.temperature {
        TemperatureMode::Dual { eps } => solve_temperature(q_table.view(), eps),
        TemperatureMode::Fixed { eta } => eta,
    };
    let w = compute_weights(q_table.view(), eta);
    let weights_kl = mean_kl_to_uniform(w.view());
    let weights: Vec<f64> = w.t().iter().copied().collect();
    Ok(ImproveRows {
        states: states.clone(),
        actions,
        weights,
        n,
        eta,
        weights_kl,
    })
}

struct ImproveTerms {
    nll: Var,
    kl_sum: Var,
}

fn improvement_terms(
    tape: &mut Tape,
    params: &MlpVars,
    old_policy: &MlpParams,
    states: Array2<f64>,
    actions: Array2<f64>,
    weights: &[f64],
    n: usize,
) -> Result<ImproveTerms> {
    let old = policy_forward_batch(old_policy, states.view())?;
    let x = tape.constant(states);
    let head = policy_on_tape(tape, params, x);
    let a = tape.constant(actions);
    let lp = log_prob_on_tape(tape, head, a, n);
    let w = tape.constant(Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column"));
    let weighted = tape.mul(lp, w);
    let ll = tape.sum(weighted);
    let nll = tape.scale(ll, -1.0);
    let old_head = HeadVars {
        mean: tape.constant(old.mean),
        stddev: tape.constant(old.stddev),
    };
    let kl = kl_on_tape(tape, old_head, head);
    let kl_sum = tape.sum(kl);
    Ok(ImproveTerms { nll, kl_sum })
}

/// Weighted maximum likelihood with KL penalty:
/// `-sum q log pi(a|s) [- sum q log pi(M a|M s)] + beta / kl_norm * (sum KL [+ sum KL_mirrored])`.
pub fn improvement_loss_graph(
    ls: &LearnerState,
    rows: &ImproveRows,
    spec: &MirrorSpec,
    augment: bool,
    kl_norm: f64,
) -> Result<(LossGraph, ImproveDiagnostics)> {
    let k = rows.states.nrows();
    ensure_rows(k, "improvement_loss")?;
    if rows.actions.nrows() != k * rows.n || rows.weights.len() != k * rows.n {
        return Err(Error::dims("improvement rows", k * rows.n, rows.actions.nrows()));
    }
    let mut tape = Tape::new();
    let params = ls.policy.on_tape(&mut tape);
    let orig = improvement_terms(
        &mut tape,
        &params,
        &ls.old_policy,
        rows.states.clone(),
        rows.actions.clone(),
        &rows.weights,
        rows.n,
    )?;
    let mut diag = ImproveDiagnostics {
        nll_original: tape.scalar(orig.nll),
        mean_kl: tape.scalar(orig.kl_sum) / k as f64,
        eta: rows.eta,
        weights_kl: rows.weights_kl,
        ..ImproveDiagnostics::default()
    };
    let (mut nll, mut kl_sum) = (orig.nll, orig.kl_sum);
    if augment {
        let ms = spec.mirror_obs_rows(rows.states.view())?;
        let ma = spec.mirror_action_rows(rows.actions.view())?;
        let mirrored = improvement_terms(&mut tape, &params, &ls.old_policy, ms, ma, &rows.weights, rows.n)?;
        diag.nll_mirrored = tape.scalar(mirrored.nll);
        nll = tape.add(nll, mirrored.nll);
        kl_sum = tape.add(kl_sum, mirrored.kl_sum);
    }
    let penalty = tape.scale(kl_sum, ls.beta / kl_norm);
    let loss = tape.add(nll, penalty);
    diag.loss = tape.scalar(loss);
    Ok((LossGraph { tape, loss, params }, diag))
}

/// Both improvement steps on a batch of `K` states.
pub fn policy_improvement_loss<R: Rng + ?Sized>(
    ls: &LearnerState,
    states: &Array2<f64>,
    spec: &MirrorSpec,
    n: usize,
    augment: bool,
    rng: &mut R,
) -> Result<(LossGraph, ImproveDiagnostics)> {
    let rows = sample_improvement(ls, states, n, rng)?;
    improvement_loss_graph(ls, &rows, spec, augment, states.nrows() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerMetrics {
    pub learner_step: u64,
    pub td: TdDiagnostics,
    pub improve: ImproveDiagnostics,
    pub target_synced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// The buffer holds fewer transitions than one batch; nothing changed.
    Waiting { available: usize, required: usize },
    Updated(LearnerMetrics),
}

/// Samples the data one update consumes. Draw order: transitions, TD next-actions, states,
/// improvement actions.
pub fn prepare_batch<R: Rng + ?Sized>(ls: &LearnerState, buf: &ReplayBuffer, rng: &mut R) -> Result<PreparedBatch> {
    let k = ls.batch_size;
    let batch = buf.sample_transitions(k, rng)?;
    let td = prepare_td(ls, &batch, rng)?;
    let states = buf.sample_states(k, rng)?;
    let improve = sample_improvement(ls, &states, ls.n_action_samples, rng)?;
    Ok(PreparedBatch {
        td,
        improve,
        td_norm: k as f64,
        kl_norm: k as f64,
    })
}

/// Applies one critic update and one policy update from prepared data, then advances the
/// step counter and syncs the target network and old policy every `target_period` steps.
pub fn learner_update(
    ls: &mut LearnerState,
    prepared: &PreparedBatch,
    spec: &MirrorSpec,
    augment: bool,
) -> Result<LearnerMetrics> {
    let (td_graph, td) = td_loss_graph(ls, &prepared.td, spec, augment, prepared.td_norm)?;
    let (pi_graph, improve) = improvement_loss_graph(ls, &prepared.improve, spec, augment, prepared.kl_norm)?;
    let q_grad = td_graph.gradients(&ls.q)?;
    let pi_grad = pi_graph.gradients(&ls.policy)?;
    ls.q_opt.step(&mut ls.q, &q_grad);
    ls.policy_opt.step(&mut ls.policy, &pi_grad);
    ls.eta = prepared.improve.eta;
    ls.learner_step += 1;
    let target_synced = ls.learner_step % ls.target_period == 0;
    if target_synced {
        ls.q_target = ls.q.clone();
        ls.old_policy = ls.policy.clone();
    }
    Ok(LearnerMetrics {
        learner_step: ls.learner_step,
        td,
        improve,
        target_synced,
    })
}

/// One full MPO step with optional mirrored-data augmentation. An underfull buffer is a no-op.
pub fn learner_step<R: Rng + ?Sized>(
    ls: &mut LearnerState,
    buf: &ReplayBuffer,
    spec: &MirrorSpec,
    augment: bool,
    rng: &mut R,
) -> Result<StepOutcome> {
    if buf.len() < ls.batch_size {
        return Ok(StepOutcome::Waiting {
            available: buf.len(),
            required: ls.batch_size,
        });
    }
    let prepared = prepare_batch(ls, buf, rng)?;
    learner_update(ls, &prepared, spec, augment).map(StepOutcome::Updated)
}

/// Mean `|Q(s, a) - Q(M s, M a)|` over paired rows.
pub fn q_symmetry_gap(q: &MlpParams, s: ArrayView2<f64>, a: ArrayView2<f64>, spec: &MirrorSpec) -> Result<f64> {
    ensure_rows(s.nrows(), "q_symmetry_gap")?;
    let ms = spec.mirror_obs_rows(s)?;
    let ma = spec.mirror_action_rows(a)?;
    let q0 = q_forward_batch(q, s, a)?;
    let q1 = q_forward_batch(q, ms.view(), ma.view())?;
    Ok(q0.iter().zip(&q1).map(|(x, y)| (x - y).abs()).sum::<f64>() / q0.len() as f64)
}
