//! Diagonal-Gaussian policy head and its log-density and KL divergence, both on plain vectors
//! and as tape expressions over batches.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{MlpParams, MlpVars};
use super::tape::{softplus_array, Tape, Var};
use crate::error::{Error, Result};

/// Added to the softplus output so the standard deviation never reaches zero.
pub const STD_FLOOR: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl GaussianHead {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, act: &[f64]) -> Result<f64> {
        if act.len() != self.dim() {
            return Err(Error::dims("GaussianHead::log_prob", self.dim(), act.len()));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.stddev)
            .zip(act)
            .map(|((&m, &s), &a)| {
                let z = (a - m) / s;
                -0.5 * z * z - s.ln() - HALF_LN_2PI
            })
            .sum())
    }

    /// `mean + stddev * z` with `z` standard normal. The sample is not clipped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.stddev)
            .map(|(&m, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }
}

/// `KL(p || q)` for diagonal Gaussians.
pub fn kl_diag_gaussian(p: &GaussianHead, q: &GaussianHead) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::dims("kl_diag_gaussian", p.dim(), q.dim()));
    }
    let mut kl = 0.0;
    for d in 0..p.dim() {
        let (mp, sp, mq, sq) = (p.mean[d], p.stddev[d], q.mean[d], q.stddev[d]);
        let dm = mp - mq;
        kl += (sq / sp).ln() + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
    }
    Ok(kl)
}

/// Batched policy output: means and standard deviations, one row per state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBatch {
    pub mean: Array2<f64>,
    pub stddev: Array2<f64>,
}

impl GaussianBatch {
    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.nrows() == 0
    }

    pub fn head(&self, row: usize) -> GaussianHead {
        GaussianHead {
            mean: self.mean.row(row).to_vec(),
            stddev: self.stddev.row(row).to_vec(),
        }
    }

    /// Draws `n` samples per row; output row `j * n + i` is sample `i` of state `j`.
    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let (rows, dim) = self.mean.dim();
        let mut out = Array2::zeros((rows * n, dim));
        for j in 0..rows {
            for i in 0..n {
                let mut row = out.row_mut(j * n + i);
                for d in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    row[d] = self.mean[[j, d]] + self.stddev[[j, d]] * z;
                }
            }
        }
        out
    }
}

fn check_policy_shape(params: &MlpParams) -> Result<usize> {
    let out = params.output_dim();
    if out % 2 != 0 {
        return Err(Error::ContractViolation(format!(
            "policy output size {out} is not mean + raw stddev"
        )));
    }
    Ok(out / 2)
}

/// Splits the raw network output into `tanh` means and `softplus + floor` stddevs.
fn split_head(raw: Array2<f64>, act_dim: usize) -> GaussianBatch {
    let mean = raw.slice(ndarray::s![.., ..act_dim]).mapv(super::tape::tanh);
    let stddev = softplus_array(&raw.slice(ndarray::s![.., act_dim..]).to_owned()) + STD_FLOOR;
    GaussianBatch { mean, stddev }
}

pub fn policy_forward_batch(params: &MlpParams, obs: ArrayView2<f64>) -> Result<GaussianBatch> {
    let act_dim = check_policy_shape(params)?;
    Ok(split_head(params.forward(obs)?, act_dim))
}

pub fn policy_forward(params: &MlpParams, obs: &[f64]) -> Result<GaussianHead> {
    let x = ArrayView2::from_shape((1, obs.len()), obs)
        .map_err(|_| Error::dims("policy_forward", params.input_dim(), obs.len()))?;
    Ok(policy_forward_batch(params, x)?.head(0))
}

/// Q-network evaluation on concatenated `[obs, act]` rows.
pub fn q_forward_batch(params: &MlpParams, obs: ArrayView2<f64>, act: ArrayView2<f64>) -> Result<Vec<f64>> {
    if obs.nrows() != act.nrows() {
        return Err(Error::dims("q_forward rows", obs.nrows(), act.nrows()));
    }
    let x = ndarray::concatenate(ndarray::Axis(1), &[obs, act])
        .map_err(|e| Error::ContractViolation(e.to_string()))?;
    let y = params.forward(x.view())?;
    if y.ncols() != 1 {
        return Err(Error::dims("q_forward output", 1, y.ncols()));
    }
    Ok(y.column(0).to_vec())
}

pub fn q_forward(params: &MlpParams, obs: &[f64], act: &[f64]) -> Result<f64> {
    let o = ArrayView2::from_shape((1, obs.len()), obs).expect("1 x n view");
    let a = ArrayView2::from_shape((1, act.len()), act).expect("1 x n view");
    Ok(q_forward_batch(params, o, a)?[0])
}

/// Tape handles for a batch of Gaussian heads.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub mean: Var,
    pub stddev: Var,
}

/// Policy forward pass on the tape.
pub fn policy_on_tape(tape: &mut Tape, vars: &MlpVars, obs: Var) -> HeadVars {
    let raw = vars.forward(tape, obs);
    let width = tape.value(raw).ncols();
    let act_dim = width / 2;
    let m = tape.slice_cols(raw, 0, act_dim);
    let mean = tape.tanh(m);
    let r = tape.slice_cols(raw, act_dim, width);
    let sp = tape.softplus(r);
    let stddev = tape.add_scalar(sp, STD_FLOOR);
    HeadVars { mean, stddev }
}

/// Per-row log-density (`rows x 1`) of `actions` under `head`. When `repeat > 1`, each head
/// row scores `repeat` consecutive action rows.
pub fn log_prob_on_tape(tape: &mut Tape, head: HeadVars, actions: Var, repeat: usize) -> Var {
    let (mean, stddev) = if repeat > 1 {
        (tape.repeat_rows(head.mean, repeat), tape.repeat_rows(head.stddev, repeat))
    } else {
        (head.mean, head.stddev)
    };
    let dim = tape.value(mean).ncols() as f64;
    let diff = tape.sub(actions, mean);
    let z = tape.div(diff, stddev);
    let z2 = tape.square(z);
    let quad = tape.scale(z2, -0.5);
    let log_s = tape.ln(stddev);
    let terms = tape.sub(quad, log_s);
    let per_row = tape.sum_cols(terms);
    tape.add_scalar(per_row, -dim * HALF_LN_2PI)
}

/// Per-row `KL(p || q)` (`rows x 1`).
pub fn kl_on_tape(tape: &mut Tape, p: HeadVars, q: HeadVars) -> Var {
    let ratio = tape.div(q.stddev, p.stddev);
    let log_ratio = tape.ln(ratio);
    let var_p = tape.square(p.stddev);
    let dm = tape.sub(p.mean, q.mean);
    let dm2 = tape.square(dm);
    let num = tape.add(var_p, dm2);
    let var_q = tape.square(q.stddev);
    let den = tape.scale(var_q, 2.0);
    let frac = tape.div(num, den);
    let sum = tape.add(log_ratio, frac);
    let terms = tape.add_scalar(sum, -0.5);
    tape.sum_cols(terms)
}
