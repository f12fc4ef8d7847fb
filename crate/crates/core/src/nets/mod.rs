//! Dense-network substrate: reverse-mode tape, MLPs, Gaussian policy heads, Adam, checkpoints
//! and finite-difference gradient checking.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod mlp;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{
    kl_diag_gaussian, policy_forward, policy_forward_batch, q_forward, q_forward_batch, GaussianBatch,
    GaussianHead,
};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{MlpParams, MlpVars};
pub use tape::{Gradients, Tape, Var};
