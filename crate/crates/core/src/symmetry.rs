//! The sagittal mirror as a signed permutation.
//!
//! A mirror acts on a vector `x` by `out[i] = sign[i] * x[perm[i]]`. Applying it is exact in
//! floating point (reindexing plus sign flips), so involution holds bit-for-bit.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nets::MlpParams;
use crate::{ACT_DIM, OBS_DIM};

/// Signed permutation pair describing one reflection on observation and action spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorSpec {
    pub obs_perm: Vec<usize>,
    pub obs_sign: Vec<f64>,
    pub act_perm: Vec<usize>,
    pub act_sign: Vec<f64>,
}

/// Leg order used throughout: front-left, front-right, hind-left, hind-right.
const LEG_SWAP: [usize; 4] = [1, 0, 3, 2];

fn block_perm(blocks: usize) -> Vec<usize> {
    (0..blocks)
        .flat_map(|blk| LEG_SWAP.iter().map(move |&leg| blk * 4 + leg))
        .collect()
}

/// Mirror for the `SymQuad` layout.
///
/// Left and right legs swap inside every per-leg block. Abduction angles, abduction
/// velocities, lateral velocity and abduction torques change sign.
pub fn build_quadruped_mirror_spec() -> MirrorSpec {
    // observation blocks: h, b, h_dot, b_dot, then v, w, theta, omega
    let mut obs_perm = block_perm(4);
    obs_perm.extend([16, 17, 18, 19]);
    let mut obs_sign = vec![1.0; OBS_DIM];
    for i in (4..8).chain(12..16) {
        obs_sign[i] = -1.0;
    }
    obs_sign[17] = -1.0;

    let act_perm = block_perm(2);
    let mut act_sign = vec![1.0; ACT_DIM];
    for s in &mut act_sign[4..8] {
        *s = -1.0;
    }

    MirrorSpec {
        obs_perm,
        obs_sign,
        act_perm,
        act_sign,
    }
}

fn apply(perm: &[usize], sign: &[f64], x: &[f64], context: &'static str) -> Result<Vec<f64>> {
    if x.len() != perm.len() {
        return Err(Error::dims(context, perm.len(), x.len()));
    }
    Ok(perm.iter().zip(sign).map(|(&p, &s)| s * x[p]).collect())
}

fn apply_rows(perm: &[usize], sign: &[f64], x: ArrayView2<f64>, context: &'static str) -> Result<Array2<f64>> {
    if x.ncols() != perm.len() {
        return Err(Error::dims(context, perm.len(), x.ncols()));
    }
    let mut out = Array2::zeros(x.raw_dim());
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for (i, (&p, &s)) in perm.iter().zip(sign).enumerate() {
            dst[i] = s * src[p];
        }
    }
    Ok(out)
}

impl MirrorSpec {
    pub fn obs_dim(&self) -> usize {
        self.obs_perm.len()
    }

    pub fn act_dim(&self) -> usize {
        self.act_perm.len()
    }

    pub fn mirror_obs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        apply(&self.obs_perm, &self.obs_sign, obs, "mirror_obs")
    }

    pub fn mirror_action(&self, act: &[f64]) -> Result<Vec<f64>> {
        apply(&self.act_perm, &self.act_sign, act, "mirror_action")
    }

    /// Mirrors every row of a batch of observations.
    pub fn mirror_obs_rows(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        apply_rows(&self.obs_perm, &self.obs_sign, obs, "mirror_obs_rows")
    }

    /// Mirrors every row of a batch of actions.
    pub fn mirror_action_rows(&self, act: ArrayView2<f64>) -> Result<Array2<f64>> {
        apply_rows(&self.act_perm, &self.act_sign, act, "mirror_action_rows")
    }

    /// Reward and `done` are copied; both observations and the action are reflected.
    pub fn mirror_transition(&self, t: &Transition) -> Result<Transition> {
        Ok(Transition {
            s: self.mirror_obs(&t.s)?,
            a: self.mirror_action(&t.a)?,
            r: t.r,
            s_next: self.mirror_obs(&t.s_next)?,
            done: t.done,
        })
    }

    /// Dense observation mirror matrix `M_s` with `M_s x = mirror_obs(x)`.
    pub fn obs_matrix(&self) -> Array2<f64> {
        dense(&self.obs_perm, &self.obs_sign)
    }

    /// Dense action mirror matrix `M_a`.
    pub fn act_matrix(&self) -> Array2<f64> {
        dense(&self.act_perm, &self.act_sign)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_spec(self)
    }
}

fn dense(perm: &[usize], sign: &[f64]) -> Array2<f64> {
    let n = perm.len();
    let mut m = Array2::zeros((n, n));
    for (i, (&p, &s)) in perm.iter().zip(sign).enumerate() {
        if p < n {
            m[[i, p]] = s;
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Converts the report into an error naming every failed check.
    pub fn into_result(self) -> Result<()> {
        if self.all_passed() {
            return Ok(());
        }
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({})", c.name, c.detail))
            .collect();
        Err(Error::ContractViolation(format!(
            "invalid mirror spec: {}",
            failed.join("; ")
        )))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn bijectivity(perm: &[usize], sign_len: usize) -> (bool, String) {
    if perm.len() != sign_len {
        return (
            false,
            format!("perm length {} != sign length {}", perm.len(), sign_len),
        );
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() {
            return (false, format!("index {p} out of range"));
        }
        if seen[p] {
            return (false, format!("index {p} repeated"));
        }
        seen[p] = true;
    }
    (true, format!("{} indices", perm.len()))
}

fn involution(perm: &[usize], sign: &[f64]) -> (bool, String) {
    let n = perm.len();
    if sign.len() != n || perm.iter().any(|&p| p >= n) {
        return (false, "not a well-formed signed permutation".into());
    }
    for i in 0..n {
        let j = perm[i];
        if perm[j] != i {
            return (false, format!("perm[perm[{i}]] = {} != {i}", perm[j]));
        }
        if sign[i] * sign[j] != 1.0 {
            return (false, format!("sign[{i}] * sign[{j}] != 1"));
        }
    }
    (true, "M * M = I".into())
}

fn sign_domain(sign: &[f64]) -> (bool, String) {
    match sign.iter().position(|&s| s != 1.0 && s != -1.0) {
        Some(i) => (false, format!("sign[{i}] = {} not in {{+1, -1}}", sign[i])),
        None => (true, format!("{} signs in {{+1, -1}}", sign.len())),
    }
}

/// Runs the structural checks on a mirror spec. Never panics; failures are report entries.
pub fn validate_spec(spec: &MirrorSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name, (passed, detail): (bool, String)| checks.push(Check { name, passed, detail });
    push("obs_bijective", bijectivity(&spec.obs_perm, spec.obs_sign.len()));
    push("act_bijective", bijectivity(&spec.act_perm, spec.act_sign.len()));
    push("obs_involution", involution(&spec.obs_perm, &spec.obs_sign));
    push("act_involution", involution(&spec.act_perm, &spec.act_sign));
    push("obs_sign_domain", sign_domain(&spec.obs_sign));
    push("act_sign_domain", sign_domain(&spec.act_sign));
    ValidationReport { checks }
}

/// Projects the first layer of a network onto mirror-invariant inputs, so that
/// `f(M x) = f(x)` holds up to summation order. `perm`/`sign` describe the input mirror.
fn symmetrize_input_layer(params: &mut MlpParams, perm: &[usize], sign: &[f64]) {
    let w = &mut params.layers[0].w;
    let orig = w.clone();
    for (i, (&p, &s)) in perm.iter().zip(sign).enumerate() {
        for c in 0..w.ncols() {
            w[[i, c]] = 0.5 * (orig[[i, c]] + s * orig[[p, c]]);
        }
    }
}

/// A mirror-invariant Q-network: `Q(M s, M a) = Q(s, a)`.
pub fn symmetrize_q(params: &MlpParams, spec: &MirrorSpec) -> MlpParams {
    let mut out = params.clone();
    let n_obs = spec.obs_dim();
    let perm: Vec<usize> = spec
        .obs_perm
        .iter()
        .copied()
        .chain(spec.act_perm.iter().map(|p| p + n_obs))
        .collect();
    let sign: Vec<f64> = spec.obs_sign.iter().chain(&spec.act_sign).copied().collect();
    symmetrize_input_layer(&mut out, &perm, &sign);
    out
}

/// A symmetric Gaussian policy: `mean(M s) = M_a mean(s)` and `stddev(M s) = P_a stddev(s)`,
/// where `P_a` is the unsigned action permutation.
pub fn symmetrize_policy(params: &MlpParams, spec: &MirrorSpec) -> MlpParams {
    let mut out = params.clone();
    symmetrize_input_layer(&mut out, &spec.obs_perm, &spec.obs_sign);
    let act_dim = spec.act_dim();
    let last = out.layers.last_mut().expect("network has layers");
    let (w0, b0) = (last.w.clone(), last.b.clone());
    for c in 0..act_dim {
        let (p, s) = (spec.act_perm[c], spec.act_sign[c]);
        for r in 0..w0.nrows() {
            last.w[[r, c]] = 0.5 * (w0[[r, c]] + s * w0[[r, p]]);
            last.w[[r, act_dim + c]] = 0.5 * (w0[[r, act_dim + c]] + w0[[r, act_dim + p]]);
        }
        last.b[c] = 0.5 * (b0[c] + s * b0[p]);
        last.b[act_dim + c] = 0.5 * (b0[act_dim + c] + b0[act_dim + p]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadruped_perm_swaps_leg_pairs() {
        let spec = build_quadruped_mirror_spec();
        assert_eq!(&spec.obs_perm[0..4], &[1, 0, 3, 2]);
        assert_eq!(&spec.obs_perm[4..8], &[5, 4, 7, 6]);
        assert_eq!(&spec.obs_perm[16..20], &[16, 17, 18, 19]);
        assert_eq!(spec.act_perm, vec![1, 0, 3, 2, 5, 4, 7, 6]);
        assert_eq!(spec.obs_sign.iter().filter(|&&s| s == -1.0).count(), 9);
        assert_eq!(spec.act_sign.iter().filter(|&&s| s == -1.0).count(), 4);
    }

    #[test]
    fn basis_vector_round_trip() {
        let spec = build_quadruped_mirror_spec();
        let mut e4 = vec![0.0; OBS_DIM];
        e4[4] = 1.0;
        let twice = spec.mirror_obs(&spec.mirror_obs(&e4).unwrap()).unwrap();
        assert_eq!(twice, e4);
    }

    #[test]
    fn mirror_obs_hand_table() {
        let spec = build_quadruped_mirror_spec();
        let mut obs = vec![0.0; OBS_DIM];
        obs[0..8].copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, -0.5, 0.0, 0.25]);
        let m = spec.mirror_obs(&obs).unwrap();
        assert_eq!(&m[0..4], &[0.2, 0.1, 0.4, 0.3]);
        assert_eq!(&m[4..8], &[0.5, -0.5, -0.25, 0.0]);
        assert!(m[8..].iter().all(|&x| x == 0.0));
        // input untouched
        assert_eq!(obs[0], 0.1);
    }

    #[test]
    fn mirror_action_hand_table() {
        let spec = build_quadruped_mirror_spec();
        let act = [1.0, -1.0, 0.0, 0.5, 0.2, 0.0, -0.3, 0.1];
        let m = spec.mirror_action(&act).unwrap();
        assert_eq!(m, vec![-1.0, 1.0, 0.5, 0.0, 0.0, -0.2, -0.1, 0.3]);
        assert_eq!(spec.mirror_action(&[0.0; ACT_DIM]).unwrap(), vec![0.0; ACT_DIM]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = build_quadruped_mirror_spec();
        assert!(matches!(
            spec.mirror_obs(&[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 20, got: 3, .. })
        ));
        assert!(spec.mirror_action(&[0.0; 20]).is_err());
    }

    #[test]
    fn transition_keeps_reward_and_done() {
        let spec = build_quadruped_mirror_spec();
        let t = Transition {
            s: (0..OBS_DIM).map(|i| i as f64 * 0.1).collect(),
            a: (0..ACT_DIM).map(|i| 0.3 - i as f64 * 0.07).collect(),
            r: 0.7,
            s_next: (0..OBS_DIM).map(|i| -(i as f64) * 0.05).collect(),
            done: false,
        };
        let m = spec.mirror_transition(&t).unwrap();
        assert_eq!(m.r, 0.7);
        assert!(!m.done);
        assert_eq!(spec.mirror_transition(&m).unwrap(), t);
    }

    #[test]
    fn validation_catches_defects() {
        assert!(validate_spec(&build_quadruped_mirror_spec()).all_passed());

        let mut repeated = build_quadruped_mirror_spec();
        repeated.obs_perm[1] = 1;
        let report = validate_spec(&repeated);
        assert!(!report.check("obs_bijective").unwrap().passed);
        assert!(report.into_result().is_err());

        let mut half = build_quadruped_mirror_spec();
        half.act_sign[2] = 0.5;
        let report = validate_spec(&half);
        assert!(!report.check("act_sign_domain").unwrap().passed);
        assert!(report.check("act_bijective").unwrap().passed);
    }

    #[test]
    fn sign_must_respect_pairing() {
        // swapping 0<->1 with only one of them negated is not an involution
        let mut spec = build_quadruped_mirror_spec();
        spec.obs_sign[0] = -1.0;
        let report = validate_spec(&spec);
        assert!(!report.check("obs_involution").unwrap().passed);
        assert!(report.check("obs_sign_domain").unwrap().passed);
    }

    #[test]
    fn dense_matrix_matches_sparse_application() {
        let spec = build_quadruped_mirror_spec();
        let m = spec.obs_matrix();
        let x: Vec<f64> = (0..OBS_DIM).map(|i| (i as f64).sin()).collect();
        let dense = m.dot(&ndarray::Array1::from(x.clone()));
        assert_eq!(dense.to_vec(), spec.mirror_obs(&x).unwrap());
        let identity: Array2<f64> = m.dot(&m);
        assert_eq!(identity, Array2::<f64>::eye(OBS_DIM));
    }

    proptest! {
        #[test]
        fn involution_and_norm(x in prop::collection::vec(-1e3f64..1e3, OBS_DIM)) {
            let spec = build_quadruped_mirror_spec();
            let m = spec.mirror_obs(&x).unwrap();
            prop_assert_eq!(spec.mirror_obs(&m).unwrap(), x.clone());
            let n0: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n0 - n1).abs() <= 1e-15 * n0.max(1.0));
        }

        #[test]
        fn linearity(
            x in prop::collection::vec(-10f64..10.0, ACT_DIM),
            y in prop::collection::vec(-10f64..10.0, ACT_DIM),
            alpha in -3f64..3.0,
            beta in -3f64..3.0,
        ) {
            let spec = build_quadruped_mirror_spec();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = spec.mirror_action(&combo).unwrap();
            let mx = spec.mirror_action(&x).unwrap();
            let my = spec.mirror_action(&y).unwrap();
            for i in 0..ACT_DIM {
                prop_assert!((lhs[i] - (alpha * mx[i] + beta * my[i])).abs() <= 1e-15 * 60.0);
            }
        }
    }
}
