use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::nets::{kl_diag_gaussian, policy_forward_batch, GaussianHead, MlpParams};
use crate::symmetry::MirrorSpec;

/// Maps a Gaussian over mirrored actions back to the original action frame.
///
/// The action mirror is an involutive signed permutation, so its inverse is itself: the mean is
/// mirrored and the stddevs are permuted without signs.
pub fn pullback(head: &GaussianHead, spec: &MirrorSpec) -> Result<GaussianHead> {
    let mean = spec.mirror_action(&head.mean)?;
    let stddev = spec.act_perm.iter().map(|&p| head.stddev[p]).collect();
    Ok(GaussianHead { mean, stddev })
}

/// Gap contribution of one state from the policy head at `s` and the head at `M s`.
pub fn pointwise_gap(direct: &GaussianHead, reflected: &GaussianHead, spec: &MirrorSpec) -> Result<f64> {
    kl_diag_gaussian(direct, &pullback(reflected, spec)?)
}

/// Mean over states of `KL(pi(.|s) || pullback of pi(.|M s))`. Zero iff the policy is
/// mirror-symmetric on the sample.
pub fn symmetry_gap(policy: &MlpParams, states: ArrayView2<f64>, spec: &MirrorSpec) -> Result<f64> {
    if states.nrows() == 0 {
        return Err(Error::InsufficientData {
            requested: 1,
            available: 0,
        });
    }
    let mirrored = spec.mirror_obs_rows(states)?;
    let direct = policy_forward_batch(policy, states)?;
    let reflected = policy_forward_batch(policy, mirrored.view())?;
    let mut total = 0.0;
    for j in 0..states.nrows() {
        total += pointwise_gap(&direct.head(j), &reflected.head(j), spec)?;
    }
    Ok(total / states.nrows() as f64)
}
