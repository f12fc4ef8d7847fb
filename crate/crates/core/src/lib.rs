//! MPO actor-critic with mirrored-trajectory data augmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`symmetry`]: the sagittal mirror as a signed permutation on observations and actions.
//! - [`env`]: `SymQuad`, an analytic quadruped locomotion MDP that is exactly mirror-equivariant.
//! - [`nets`]: dense networks on a small reverse-mode tape, Gaussian heads, Adam, checkpoints.
//! - [`replay`]: bounded FIFO transition store with uniform sampling.
//! - [`mpo`]: the learner (TD policy evaluation and two-step policy improvement, each with a
//!   mirrored twin).
//! - [`harness`]: actor loop, data-limited scheduler, metrics and experiment orchestration.

pub mod env;
pub mod error;
pub mod harness;
pub mod mpo;
pub mod nets;
pub mod replay;
pub mod symmetry;

pub use error::{Error, Result};

/// Observation dimension of `SymQuad`.
pub const OBS_DIM: usize = 20;
/// Action dimension of `SymQuad`.
pub const ACT_DIM: usize = 8;
